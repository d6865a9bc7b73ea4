"""Domain model: agents, valuations, proportional allocation, liquid welfare.

Conventions used throughout the library:

* bids / payments are ``(n, m)`` float arrays (agents x items), money units;
* allocations are ``(n, m)`` arrays with every column summing to 1;
* all functions here are pure and never mutate their inputs.

Centralised numeric tolerances live at the top of this module.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, UsageError

#: Feasibility slack below which a constraint counts as violated.
FEASIBILITY_TOL = 1e-9
#: Tolerance for exact-equality checks (column sums, round trips).
EQUALITY_TOL = 1e-12
#: Relative tolerance for analytic-vs-finite-difference gradient checks.
GRADIENT_CHECK_TOL = 1e-6

VALUATION_KINDS = ("linear", "power-sum", "log-sum")


@dataclass(frozen=True)
class ValuationSpec:
    """A concave, non-decreasing, separable valuation over item fractions.

    kind
        ``linear``     v(d) = sum_j c_j * d_j
        ``power-sum``  v(d) = sum_j c_j * d_j**q_j  with q_j in (0, 1]
        ``log-sum``    v(d) = sum_j c_j * ln(1 + d_j / s) with shift s > 0

    All kinds satisfy v(0) = 0 and have nonnegative coefficients, so v >= 0
    on the whole unit cube.
    """

    kind: str
    coeffs: tuple[float, ...]
    q: tuple[float, ...] | None = None
    shift: float | None = None

    def __post_init__(self):
        if self.kind not in VALUATION_KINDS:
            raise UsageError(f"unknown valuation kind {self.kind!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if any(c < 0 or not math.isfinite(c) for c in self.coeffs):
            raise DomainError("valuation coefficients must be finite and >= 0")
        if self.kind == "power-sum":
            if self.q is None:
                raise UsageError("power-sum valuation requires exponents q")
            qs = tuple(float(x) for x in self.q)
            if len(qs) != len(self.coeffs):
                raise UsageError("need one exponent per item")
            if any(not (0.0 < x <= 1.0) for x in qs):
                raise DomainError("power-sum exponents must lie in (0, 1]")
            object.__setattr__(self, "q", qs)
        elif self.q is not None:
            raise UsageError(f"{self.kind} valuation takes no exponents")
        if self.kind == "log-sum":
            if self.shift is None or not (float(self.shift) > 0):
                raise DomainError("log-sum valuation requires a shift s > 0")
            object.__setattr__(self, "shift", float(self.shift))
        elif self.shift is not None:
            raise UsageError(f"{self.kind} valuation takes no shift")

    @property
    def m(self) -> int:
        return len(self.coeffs)


def _check_fractions(d: np.ndarray, m: int) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (m,):
        raise UsageError(f"expected a fraction vector of length {m}, got shape {d.shape}")
    if np.any(d < -EQUALITY_TOL) or np.any(d > 1.0 + EQUALITY_TOL):
        raise DomainError("item fractions must lie in [0, 1]")
    return np.clip(d, 0.0, 1.0)


def eval_valuation(val: ValuationSpec, d) -> float:
    """Value of receiving fractions ``d`` of the items."""
    d = _check_fractions(d, val.m)
    c = np.asarray(val.coeffs)
    if val.kind == "linear":
        return float(c @ d)
    if val.kind == "power-sum":
        q = np.asarray(val.q)
        return float(np.sum(c * d**q))
    return float(np.sum(c * np.log1p(d / val.shift)))


def eval_gradient(val: ValuationSpec, d) -> np.ndarray:
    """Analytic partial derivatives of the valuation at ``d``.

    Power-sum exponents below 1 have an unbounded derivative at a zero
    fraction; the corresponding component is returned as ``inf``.
    """
    d = _check_fractions(d, val.m)
    c = np.asarray(val.coeffs)
    if val.kind == "linear":
        return c.astype(float).copy()
    if val.kind == "power-sum":
        q = np.asarray(val.q)
        with np.errstate(divide="ignore"):
            g = c * q * d ** (q - 1.0)
        g[(d == 0.0) & (q < 1.0) & (c > 0.0)] = np.inf
        g[c == 0.0] = 0.0
        return g
    return c / (val.shift + d)


def partial_derivative(val: ValuationSpec, d, j: int) -> float:
    """Single component of the gradient; cheaper than the full vector."""
    return float(eval_gradient(val, d)[j])


@dataclass(frozen=True)
class AgentSpec:
    """One bidding agent: valuation, budget and objective mix.

    ``rho`` interpolates between a pure valuation maximiser (0) and a pure
    utility maximiser (1).  The return-on-spend target is normalised to 1
    and is not configurable.
    """

    valuation: ValuationSpec
    budget: float
    rho: float

    #: return-on-spend target, fixed by normalisation
    ros_target: float = field(default=1.0, init=False)

    def __post_init__(self):
        if not (math.isfinite(self.budget) and self.budget > 0):
            raise DomainError("budget must be finite and positive")
        if not (0.0 <= self.rho <= 1.0):
            raise DomainError("rho must lie in [0, 1]")


@dataclass(frozen=True)
class Instance:
    """A complete game: the agents and the number of divisible items."""

    agents: tuple[AgentSpec, ...]
    item_count: int

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if len(self.agents) < 1:
            raise DomainError("need at least one agent")
        if self.item_count < 1:
            raise DomainError("need at least one item")
        for a in self.agents:
            if a.valuation.m != self.item_count:
                raise UsageError("valuation length must match the item count")

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def m(self) -> int:
        return self.item_count

    def budgets(self) -> np.ndarray:
        return np.array([a.budget for a in self.agents])


def validate_bids(bids, n: int | None = None, m: int | None = None) -> np.ndarray:
    """Coerce to an (n, m) float array and check entries are finite and >= 0."""
    b = np.asarray(bids, dtype=float)
    if b.ndim != 2:
        raise UsageError("bids must be a 2-D agents x items array")
    if n is not None and b.shape[0] != n:
        raise UsageError(f"expected {n} bid rows, got {b.shape[0]}")
    if m is not None and b.shape[1] != m:
        raise UsageError(f"expected {m} bid columns, got {b.shape[1]}")
    if not np.all(np.isfinite(b)) or np.any(b < 0):
        raise DomainError("bids must be finite and nonnegative")
    return b


@dataclass(frozen=True)
class Allocation:
    """Fractions of each item per agent, plus per-item degeneracy flags.

    ``degenerate[j]`` is True when item ``j`` received no bids and was split
    equally among the agents by convention.
    """

    shares: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        sums = self.shares.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise DomainError("every item's shares must sum to 1")


def allocate_proportional(bids) -> Allocation:
    """Proportional-share allocation: d_ij = b_ij / (total bid on item j).

    Items with a zero bid total are split equally (1/n each) and flagged.
    Scaling a column by any positive constant leaves the output unchanged.
    """
    b = validate_bids(bids)
    n = b.shape[0]
    totals = b.sum(axis=0)
    degenerate = totals == 0.0
    safe = np.where(degenerate, 1.0, totals)
    shares = b / safe
    shares[:, degenerate] = 1.0 / n
    return Allocation(shares=shares, degenerate=degenerate)


@dataclass(frozen=True)
class ConstraintReport:
    """Budget and return-on-spend slacks for one agent."""

    budget_slack: float
    ros_slack: float
    feasible: bool


def check_constraints(agent: AgentSpec, payments, value: float,
                      tol: float = FEASIBILITY_TOL) -> ConstraintReport:
    """Evaluate the agent's budget and return-on-spend constraints.

    budget slack = budget - total payment; RoS slack = value - total payment.
    The agent is feasible when both slacks are >= -tol.
    """
    spent = float(np.sum(np.asarray(payments, dtype=float)))
    budget_slack = agent.budget - spent
    ros_slack = float(value) - spent
    return ConstraintReport(
        budget_slack=budget_slack,
        ros_slack=ros_slack,
        feasible=budget_slack >= -tol and ros_slack >= -tol,
    )


def agent_values(instance: Instance, alloc: Allocation) -> np.ndarray:
    """Each agent's valuation of its row of the allocation."""
    return np.array([
        eval_valuation(a.valuation, alloc.shares[i])
        for i, a in enumerate(instance.agents)
    ])


def liquid_welfare(instance: Instance, alloc: Allocation) -> float:
    """Total budget-capped value: sum_i min(budget_i, v_i(d_i))."""
    vals = agent_values(instance, alloc)
    return float(np.sum(np.minimum(instance.budgets(), vals)))


def liquid_welfare_of_values(budgets, values) -> float:
    """Liquid welfare from precomputed per-agent values."""
    return float(np.sum(np.minimum(np.asarray(budgets), np.asarray(values))))


# ---------------------------------------------------------------------------
# JSON serialisation.  Field names are part of the public file format:
#   agent:    {"kind", "coeffs", "q"?, "s"?, "budget", "rho"}
#   instance: {"agents": [...], "items": m}
# ---------------------------------------------------------------------------

def agent_to_dict(agent: AgentSpec) -> dict:
    d = {"kind": agent.valuation.kind, "coeffs": list(agent.valuation.coeffs),
         "budget": agent.budget, "rho": agent.rho}
    if agent.valuation.q is not None:
        d["q"] = list(agent.valuation.q)
    if agent.valuation.shift is not None:
        d["s"] = agent.valuation.shift
    return d


def agent_from_dict(d: dict) -> AgentSpec:
    val = ValuationSpec(kind=d["kind"], coeffs=tuple(d["coeffs"]),
                        q=tuple(d["q"]) if "q" in d else None,
                        shift=d.get("s"))
    return AgentSpec(valuation=val, budget=float(d["budget"]), rho=float(d["rho"]))


def instance_to_dict(instance: Instance) -> dict:
    return {"agents": [agent_to_dict(a) for a in instance.agents],
            "items": instance.item_count}


def instance_from_dict(d: dict) -> Instance:
    return Instance(agents=tuple(agent_from_dict(a) for a in d["agents"]),
                    item_count=int(d["items"]))


def instance_to_json(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance))


def instance_from_json(text: str) -> Instance:
    return instance_from_dict(json.loads(text))
