"""Exception hierarchy for the propmech library.

Most errors subclass ValueError so casual callers can catch broadly, but
each contract violation gets a distinct type for precise handling in the
experiment harness.
"""


class PropmechError(ValueError):
    """Base class for all library errors."""


class DomainError(PropmechError):
    """Input outside the mathematical domain of an operation."""


class UsageError(PropmechError):
    """Operation called with arguments it does not support."""


class DegenerateColumnError(PropmechError):
    """An all-zero bid column where the payment scheme is undefined."""


class AssumptionViolationError(PropmechError):
    """A mechanism's published assumption (e.g. a bid cap) was violated."""


class PreconditionError(PropmechError):
    """A documented precondition of an operation does not hold."""


class InternalInvariantError(PropmechError):
    """A checked internal invariant failed; indicates a library bug."""


class QuadratureError(PropmechError):
    """Adaptive quadrature failed to converge to the requested tolerance."""


class UnsupportedConstructionError(PropmechError):
    """A certificate construction does not cover the given agent mix."""


class EnumerationBudgetError(UsageError):
    """A grid enumeration would exceed the configured assignment budget."""


class InfeasibleProgramError(PropmechError):
    """An agent's bidding program has no feasible point.

    Carries the least-infeasible iterate found so callers can inspect it.
    """

    def __init__(self, message, best_bids=None, min_slack=None):
        super().__init__(message)
        self.best_bids = best_bids
        self.min_slack = min_slack
