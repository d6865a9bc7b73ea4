"""Best-response dynamics to pure Nash equilibria, and equilibrium checks.

Agents update sequentially with exact best responses.  A profile counts as
converged only when the explicit deviation check passes: every agent's best
unilateral improvement is at most ``nash_tol``.  Bid-movement stagnation
alone merely triggers that check, since movement can stall in flat
directions of the objective.

Non-convergence within the round budget is reported as data (a result with
``converged=False`` and the movement trajectory), not as an exception.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleProgramError, PreconditionError, UsageError
from .model import (
    FEASIBILITY_TOL,
    Allocation,
    Instance,
    eval_valuation,
    validate_bids,
)
from .payments import MechanismSpec, mechanism_outcome
from .solver import (
    KktReport,
    SolverParams,
    best_response,
    kkt_residual,
)

logger = logging.getLogger(__name__)

#: improvements below this never trigger a bid update (keeps flat
#: directions, e.g. items an agent holds alone, from wandering)
_INERTIA_TOL = 1e-12


@dataclass
class DeviationReport:
    """Best unilateral improvement per agent at a bid profile."""

    improvements: np.ndarray
    passes: np.ndarray
    delta: float

    @property
    def all_pass(self) -> bool:
        return bool(np.all(self.passes))


@dataclass
class EquilibriumResult:
    """Final state of a best-response dynamics run."""

    bids: np.ndarray
    allocation: Allocation
    payments: np.ndarray
    kkt_reports: list[KktReport | None]
    rounds: int
    max_move: float
    converged: bool
    improvements: np.ndarray
    move_history: list[float] = field(default_factory=list)
    threshold_cover: bool | None = None
    failure: str | None = None

    @property
    def max_kkt_residual(self) -> float:
        vals = [r.max_residual for r in self.kkt_reports if r is not None]
        finite = [v for v in vals if np.isfinite(v)]
        return max(finite) if finite else float("nan")


def default_init(instance: Instance, mech: MechanismSpec, kind: str = "budget-split",
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """Initial bid matrix.

    ``budget-split`` spreads half of each budget evenly (interior and
    budget-feasible under pay-your-bid).  ``tight`` starts the power-family
    schemes at the all-budget-tight stationary candidate, which is an exact
    equilibrium whenever the shares it implies are nonnegative and cover
    each agent's return on spend; such equilibria are saddle points of the
    best-response map, so dynamics cannot reach them from generic starts
    but verifies them instantly when seeded there.  ``cap`` pins every raw
    bid at the modified scheme's public bound.  ``zeros`` and ``random``
    are self-explanatory.
    """
    n, m = instance.n, instance.m
    budgets = instance.budgets()
    if kind == "budget-split":
        bids = np.tile((budgets / (2.0 * m))[:, None], (1, m))
    elif kind == "zeros":
        bids = np.zeros((n, m))
    elif kind == "random":
        if rng is None:
            raise UsageError("random init needs a generator")
        bids = rng.uniform(0.0, 1.0, size=(n, m)) * (budgets / (2.0 * m))[:, None]
    elif kind == "tight":
        if mech.scheme not in ("power", "modified"):
            return default_init(instance, mech, "budget-split", rng)
        e = mech.power_exponent
        theta = mech.threshold
        # split budgets across items in proportion to item weight (taken
        # from the first agent's coefficients; exact when the valuation
        # matrix has rank one, a harmless guess otherwise)
        w = np.asarray(instance.agents[0].valuation.coeffs, dtype=float)
        w = w / w.sum() if w.sum() > 0 else np.full(m, 1.0 / m)
        g_items = mech.eps * budgets.sum() * w
        b_items = g_items ** (1.0 / (1.0 + e))
        rivals = np.outer(budgets, w) / (theta * b_items[None, :] ** e)
        y = np.maximum(b_items[None, :] - rivals, 0.0)
        if mech.scheme == "modified":
            scale = n * mech.bid_cap
            y = np.minimum(y, (mech.bid_cap - theta) / scale)
            bids = np.where(y > 0.0, theta + y * scale, 0.0)
        else:
            bids = y
    elif kind == "cap":
        if mech.scheme != "modified":
            raise UsageError("the cap init applies to the modified scheme")
        bids = np.full((n, m), float(mech.bid_cap))
    else:
        raise UsageError(f"unknown init kind {kind!r}")
    if mech.scheme == "modified":
        bids = np.minimum(bids, mech.bid_cap)
    return bids


def _objective_and_min_slack(agent, own, others, mech) -> tuple[float, float]:
    """Objective plus the worse of the budget and return-on-spend slacks."""
    own = np.asarray(own, dtype=float).reshape(1, -1)
    stacked = np.vstack([own, np.asarray(others, dtype=float)])
    alloc, pay = mechanism_outcome(stacked, mech)
    value = eval_valuation(agent.valuation, alloc.shares[0])
    spent = float(pay[0].sum())
    objective = value - agent.rho * spent
    return objective, min(agent.budget - spent, value - spent)


def verify_epsilon_nash(instance: Instance, mech: MechanismSpec, bids,
                        delta: float,
                        params: SolverParams | None = None) -> DeviationReport:
    """Check that no agent can improve its objective by more than delta.

    An agent whose current bids violate its own constraints (rival moves
    can do that, since payments depend on all bids) reports an infinite
    improvement: an infeasible profile is never an equilibrium, whatever
    the objective comparison says.
    """
    b = validate_bids(bids, n=instance.n, m=instance.m)
    improvements = np.zeros(instance.n)
    feas_tol = max(FEASIBILITY_TOL, delta) if np.isfinite(delta) else np.inf
    for i, agent in enumerate(instance.agents):
        others = np.delete(b, i, axis=0)
        current, slack = _objective_and_min_slack(agent, b[i], others, mech)
        if slack < -feas_tol:
            improvements[i] = np.inf
            continue
        try:
            br = best_response(agent, others, mech, params)
            improvements[i] = br.objective - current
        except InfeasibleProgramError:
            improvements[i] = np.inf
    return DeviationReport(improvements=improvements,
                           passes=improvements <= delta,
                           delta=delta)


def _threshold_cover(bids: np.ndarray, mech: MechanismSpec) -> bool:
    """Every item has at least one raw bid strictly above the threshold."""
    return bool(np.all((bids > mech.threshold).any(axis=0)))


def _damp_update(old: np.ndarray, target: np.ndarray, gamma: float,
                 mech: MechanismSpec) -> np.ndarray:
    """Move a fraction gamma of the way from old to target bids.

    For the modified scheme the combination is taken in thresholded space,
    otherwise averaging a sub-threshold bid with one just above the
    threshold would land back below it and the step would vanish.
    """
    if gamma >= 1.0:
        return target
    if mech.scheme != "modified":
        return (1.0 - gamma) * old + gamma * target
    theta = mech.threshold
    scale = mech.n_agents * mech.bid_cap
    y_old = np.maximum(old - theta, 0.0) / scale
    y_new = np.maximum(target - theta, 0.0) / scale
    y = (1.0 - gamma) * y_old + gamma * y_new
    return np.where(y > 0.0, np.minimum(theta + y * scale, mech.bid_cap), 0.0)


def best_response_dynamics(instance: Instance, mech: MechanismSpec,
                           init=None, schedule: str = "round-robin",
                           nash_tol: float = 1e-6, move_tol: float = 1e-8,
                           max_rounds: int = 200, seed: int = 0,
                           solver_params: SolverParams | None = None,
                           damping: float | None = None) -> EquilibriumResult:
    """Iterate best responses until no profitable deviation remains.

    ``schedule`` is ``round-robin`` or ``random-permutation`` (reshuffled
    each round from the seed).  The run is deterministic given (init,
    schedule, seed).  ``init`` may be a bid matrix or one of the named
    initialisations accepted by :func:`default_init`.

    ``damping`` blends each update between the current bid and the exact
    best response.  Pay-your-bid responses contract on their own, so the
    default there is 1 (exact).  Under the power-family schemes the
    best-response map has slope at or below -1 around equilibria (the
    response to rivals' total c is essentially s - c), so exact updates
    oscillate forever; the default 0.35 restores contraction.  Convergence
    is still declared only through the exact-deviation check, so damping
    affects the path, never what counts as an equilibrium.
    """
    if schedule not in ("round-robin", "random-permutation"):
        raise UsageError(f"unknown schedule {schedule!r}")
    if damping is None:
        damping = 1.0 if mech.scheme == "standard" else 0.35
    if not (0.0 < damping <= 1.0):
        raise UsageError("damping must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    if init is None or isinstance(init, str):
        bids = default_init(instance, mech, init or "budget-split", rng)
    else:
        bids = validate_bids(init, n=instance.n, m=instance.m).copy()

    params = solver_params or SolverParams()
    n = instance.n
    move_history: list[float] = []
    failure = None
    rounds = 0
    converged = False
    improvements = np.full(n, np.nan)

    for rounds in range(1, max_rounds + 1):
        order = (np.arange(n) if schedule == "round-robin"
                 else rng.permutation(n))
        max_move = 0.0
        round_failure = None
        for i in order:
            agent = instance.agents[i]
            others = np.delete(bids, i, axis=0)
            try:
                br = best_response(agent, others, mech, params)
            except InfeasibleProgramError as exc:
                # No feasible reply exists against these rival bids (the
                # power scheme's fixed charges can exceed any achievable
                # value).  Play the least-infeasible iterate and move on;
                # feasibility usually returns as rivals settle, and the
                # deviation check keeps such profiles from counting as
                # converged while the infeasibility persists.
                if exc.best_bids is not None:
                    fallback = np.asarray(exc.best_bids, dtype=float)
                    if mech.scheme == "modified":
                        theta = mech.threshold
                        fallback = np.where(
                            fallback > 0.0,
                            theta + fallback * mech.n_agents * mech.bid_cap,
                            0.0)
                        fallback = np.minimum(fallback, mech.bid_cap)
                    max_move = max(max_move,
                                   float(np.max(np.abs(fallback - bids[i]))))
                    bids[i] = fallback
                round_failure = f"agent {i} had no feasible reply in round {rounds}"
                continue
            current, slack = _objective_and_min_slack(agent, bids[i], others, mech)
            improves = br.objective > current + _INERTIA_TOL
            # rival moves can push a standing bid outside the agent's own
            # constraints; such a bid must be replaced no matter how its
            # stale objective compares
            must_restore = slack < -FEASIBILITY_TOL
            # indifferent agents drift toward the smaller bid: a lone
            # bidder pays nothing whatever it bids, yet a stale high bid
            # poisons rivals through their fixed charges
            indifferent_shrink = (abs(br.objective - current) <= _INERTIA_TOL
                                  and br.bids.sum() < bids[i].sum() - _INERTIA_TOL)
            if improves or must_restore or indifferent_shrink:
                updated = _damp_update(bids[i], br.bids, damping, mech)
                max_move = max(max_move, float(np.max(np.abs(updated - bids[i]))))
                bids[i] = updated
        move_history.append(max_move)
        failure = round_failure
        if max_move <= move_tol and round_failure is None:
            report = verify_epsilon_nash(instance, mech, bids, nash_tol, params)
            improvements = report.improvements
            if report.all_pass:
                converged = True
                break

    if not converged and failure is None and np.all(np.isnan(improvements)):
        report = verify_epsilon_nash(instance, mech, bids, nash_tol, params)
        improvements = report.improvements
        converged = report.all_pass

    alloc, payments = mechanism_outcome(bids, mech)
    kkt_reports: list[KktReport | None] = []
    for i in range(n):
        try:
            kkt_reports.append(kkt_residual(instance, bids, mech, i))
        except (PreconditionError, InfeasibleProgramError):
            kkt_reports.append(None)

    cover = None
    if mech.scheme == "modified":
        cover = _threshold_cover(bids, mech)
        if converged and not cover:
            failure = (failure or "") + " converged profile leaves an item with no bid above the threshold"
        elif not converged and not cover:
            logger.warning("non-converged thresholded run left %d item(s) "
                           "with no bid above the threshold",
                           int(np.sum(~(bids > mech.threshold).any(axis=0))))

    return EquilibriumResult(
        bids=bids, allocation=alloc, payments=payments,
        kkt_reports=kkt_reports, rounds=rounds,
        max_move=move_history[-1] if move_history else float("nan"),
        converged=converged, improvements=improvements,
        move_history=move_history, threshold_cover=cover, failure=failure)


@dataclass
class ConvexityProbeReport:
    """Result of sampling second differences of the power payment."""

    passes: bool
    min_second_difference: float
    worst_profile: dict | None


def convexity_probe(n: int, eps: float, samples: int = 200,
                    seed: int = 0) -> ConvexityProbeReport:
    """Numerically probe convexity of the power payment in the own bid.

    Second central differences of p(b) = c * (b + c)^e / e are sampled over
    random rival totals and bid grids.  With e = (n-1)*eps >= 1 they are
    nonnegative up to round-off; for e < 1 the probe documents the concave
    region that rules such parameters out.
    """
    if n < 2 or eps <= 0:
        raise UsageError("need n >= 2 and eps > 0 for the probe")
    e = (n - 1) * eps
    rng = np.random.default_rng(seed)
    worst = np.inf
    worst_profile = None
    h = 1e-2
    for _ in range(samples):
        c = float(rng.uniform(0.05, 5.0))
        bids = rng.uniform(h, 5.0, size=16)
        p = lambda b: c * (b + c) ** e / e
        second = (p(bids + h) - 2.0 * p(bids) + p(bids - h)) / h**2
        k = int(np.argmin(second))
        if second[k] < worst:
            worst = float(second[k])
            worst_profile = {"rival_total": c, "bid": float(bids[k]),
                             "second_difference": worst}
    return ConvexityProbeReport(passes=worst >= -1e-8,
                                min_second_difference=worst,
                                worst_profile=worst_profile)
