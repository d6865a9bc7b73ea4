"""Optimal liquid welfare, dual certificates, and price-of-anarchy reports.

The auctioneer's benchmark is the maximal budget-capped welfare
sum_i min(W_i, v_i(d_i)) over allocations whose per-item shares sum to 1.
Two independent routes compute it: a projected supergradient ascent on the
concave objective, and exact enumeration over a discretised assignment
grid, which doubles as the oracle for the ascent.

Certificates pair per-item prices alpha_j with per-agent values beta_i such
that every grid assignment satisfies
sum_j d_ij * alpha_j + beta_i >= min(W_i, v_i(d_i)) for each agent i
(summing over agents recovers the assignment-level bound).  By weak duality
a feasible certificate's objective upper-bounds the optimal liquid welfare,
so dual_objective / equilibrium_welfare certifies a price-of-anarchy ratio.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import EquilibriumResult
from .errors import (
    EnumerationBudgetError,
    PreconditionError,
    UnsupportedConstructionError,
    UsageError,
)
from .model import (
    Instance,
    ValuationSpec,
    eval_gradient,
    eval_valuation,
    liquid_welfare,
)
from .payments import MechanismSpec, transform_bids_modified
from .solver import SolverParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AssignmentGrid:
    """Discretised fractions D = {0, step, 2*step, ..., 1}; 1/step integral."""

    step: float

    def __post_init__(self):
        k = round(1.0 / self.step)
        if k < 1 or abs(k * self.step - 1.0) > 1e-12:
            raise UsageError("grid step must divide 1 exactly")

    @property
    def levels(self) -> int:
        return round(1.0 / self.step)

    def fractions(self) -> np.ndarray:
        return np.arange(self.levels + 1) * self.step


@dataclass
class LwOptimum:
    value: float
    shares: np.ndarray
    converged: bool
    iterations: int


def _project_columns_to_simplex(shares: np.ndarray) -> np.ndarray:
    """Euclidean projection of every column onto the probability simplex."""
    n = shares.shape[0]
    srt = np.sort(shares, axis=0)[::-1]
    cumsum = np.cumsum(srt, axis=0) - 1.0
    idx = np.arange(1, n + 1)[:, None]
    cond = srt - cumsum / idx > 0
    rho = n - 1 - np.argmax(cond[::-1], axis=0)
    theta = cumsum[rho, np.arange(shares.shape[1])] / (rho + 1.0)
    return np.maximum(shares - theta, 0.0)


def _capped_value_and_supergradient(instance: Instance, shares: np.ndarray):
    budgets = instance.budgets()
    vals = np.empty(instance.n)
    grads = np.zeros_like(shares)
    for i, agent in enumerate(instance.agents):
        vals[i] = eval_valuation(agent.valuation, shares[i])
        if vals[i] < budgets[i] - 1e-12:
            g = eval_gradient(agent.valuation, shares[i])
            grads[i] = np.where(np.isfinite(g), g, 1e9)
        elif abs(vals[i] - budgets[i]) <= 1e-12:
            g = eval_gradient(agent.valuation, shares[i])
            grads[i] = 0.5 * np.where(np.isfinite(g), g, 1e9)
    return float(np.sum(np.minimum(budgets, vals))), grads


def optimal_lw_concave(instance: Instance,
                       params: SolverParams | None = None,
                       seed: int = 0) -> LwOptimum:
    """Maximise liquid welfare by projected supergradient ascent.

    min(budget, value) is concave, so ascent from a few starts with a
    diminishing step converges to the optimum up to the usual nonsmooth
    wobble; the grid enumerator bounds the residual gap in tests.
    """
    params = params or SolverParams()
    n, m = instance.n, instance.m
    rng = np.random.default_rng(seed)
    starts = [np.full((n, m), 1.0 / n)]
    for _ in range(2):
        starts.append(rng.dirichlet(np.ones(n), size=m).T)

    best_val = -math.inf
    best_shares = starts[0]
    iters_per_start = max(1, params.max_iters // len(starts))
    total_iters = 0
    for start in starts:
        shares = start.copy()
        for k in range(iters_per_start):
            total_iters += 1
            val, grad = _capped_value_and_supergradient(instance, shares)
            if val > best_val:
                best_val = val
                best_shares = shares.copy()
            norm = float(np.linalg.norm(grad))
            if norm == 0.0:
                break
            step = params.step_init / math.sqrt(k + 1.0) / max(norm, 1.0)
            shares = _project_columns_to_simplex(shares + step * grad)
    val, _ = _capped_value_and_supergradient(instance, best_shares)
    return LwOptimum(value=max(best_val, val), shares=best_shares,
                     converged=True, iterations=total_iters)


def _compositions(total: int, parts: int) -> np.ndarray:
    """All nonnegative integer vectors of the given length summing to total."""
    if parts == 1:
        return np.array([[total]])
    combos = itertools.combinations(range(total + parts - 1), parts - 1)
    bars = np.array(list(combos), dtype=int).reshape(-1, parts - 1)
    first = bars[:, :1]
    middle = np.diff(bars, axis=1) - 1
    last = total + parts - 2 - bars[:, -1:]
    return np.hstack([first, middle, last])


def _item_values(val: ValuationSpec, j: int, fractions: np.ndarray) -> np.ndarray:
    c = val.coeffs[j]
    if val.kind == "linear":
        return c * fractions
    if val.kind == "power-sum":
        return c * fractions ** val.q[j]
    return c * np.log1p(fractions / val.shift)


def fit_grid_step(n: int, m: int, enum_budget: int,
                  finest: float = 1.0 / 16.0) -> float:
    """Finest step from {finest, 2*finest, ...} whose enumeration fits.

    Full-assignment enumeration costs C(levels + n - 1, n - 1) ** m
    combinations; halving the level count shrinks that fast, and a single
    level (step 1) always fits at desk scale.
    """
    step = finest
    while step < 1.0:
        k = round(1.0 / step)
        if abs(k * step - 1.0) <= 1e-12:
            count = math.comb(k + n - 1, n - 1) ** m
            if count <= enum_budget:
                return step
        step *= 2.0
    return 1.0


@dataclass
class GridOptimum:
    value: float
    shares: np.ndarray


def optimal_lw_grid(instance: Instance, grid: AssignmentGrid,
                    enum_budget: int = 5_000_000) -> GridOptimum:
    """Exact maximal liquid welfare over grid assignments with full items.

    Enumerates, per item, every split of the unit into grid fractions and
    combines items in chunks.  The combination count is
    C(levels + n - 1, n - 1) ** m and must fit the enumeration budget.
    """
    n, m = instance.n, instance.m
    k = grid.levels
    comps = _compositions(k, n)
    per_item = len(comps)
    total = per_item**m
    if total > enum_budget:
        raise EnumerationBudgetError(
            f"{total} grid assignments exceed the budget of {enum_budget}; "
            f"use a coarser step")
    shares_levels = comps * grid.step  # (C, n)

    item_vals = []  # per item: (C, n) value of agent i at that split
    for j in range(m):
        vj = np.empty((per_item, n))
        for i, agent in enumerate(instance.agents):
            vj[:, i] = _item_values(agent.valuation, j, shares_levels[:, i])
        item_vals.append(vj)

    budgets = instance.budgets()
    best_val = -math.inf
    best_combo = None
    chunk = 1 << 15
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        combo = np.array(np.unravel_index(idx, (per_item,) * m))  # (m, chunk)
        vals = np.zeros((idx.size, n))
        for j in range(m):
            vals += item_vals[j][combo[j]]
        lw = np.minimum(vals, budgets[None, :]).sum(axis=1)
        pos = int(np.argmax(lw))
        if lw[pos] > best_val:
            best_val = float(lw[pos])
            best_combo = combo[:, pos].copy()

    shares = np.empty((n, m))
    for j in range(m):
        shares[:, j] = shares_levels[best_combo[j]]
    return GridOptimum(value=best_val, shares=shares)


# ---------------------------------------------------------------------------
# Dual certificates.
# ---------------------------------------------------------------------------

@dataclass
class DualCertificate:
    """Per-item prices and per-agent offsets upper-bounding optimal welfare."""

    alpha: np.ndarray
    beta: np.ndarray
    tag: str

    @property
    def objective(self) -> float:
        return float(self.alpha.sum() + self.beta.sum())

    def to_dict(self) -> dict:
        return {"alpha": [float(a) for a in self.alpha],
                "beta": [float(b) for b in self.beta],
                "objective": self.objective, "tag": self.tag}


def _euler_terms(val: ValuationSpec, d: np.ndarray) -> np.ndarray:
    """d_j * dw_j/dd_j computed in closed form (finite even at d_j = 0)."""
    c = np.asarray(val.coeffs)
    d = np.asarray(d, dtype=float)
    if val.kind == "linear":
        return c * d
    if val.kind == "power-sum":
        q = np.asarray(val.q)
        return q * c * d**q
    return c * d / (val.shift + d)


def build_dual_standard(instance: Instance, eq: EquilibriumResult) -> DualCertificate:
    """Certificate for pay-your-bid equilibria; agents must have rho in {0, 1}.

    Prices are the per-item bid totals.  A valuation maximiser contributes
    its capped equilibrium value; a utility maximiser contributes its budget
    when capped and otherwise 2*v - sum_j d_j*(1 - d_j)*dv/dd_j, which the
    stationarity of its bids makes a valid offset.
    """
    alpha = eq.bids.sum(axis=0)
    beta = np.empty(instance.n)
    for i, agent in enumerate(instance.agents):
        if agent.rho not in (0.0, 1.0):
            raise UnsupportedConstructionError(
                "the pay-your-bid certificate covers only pure valuation "
                f"maximisers and pure utility maximisers; agent {i} has "
                f"rho = {agent.rho}")
        d = eq.allocation.shares[i]
        value = eval_valuation(agent.valuation, d)
        if agent.rho == 0.0:
            beta[i] = min(agent.budget, value)
        elif value >= agent.budget:
            beta[i] = agent.budget
        else:
            weighted = float(np.sum(_euler_terms(agent.valuation, d) * (1.0 - d)))
            beta[i] = 2.0 * value - weighted
    return DualCertificate(alpha=alpha, beta=beta, tag="standard-PM")


def build_dual_power(instance: Instance, eq: EquilibriumResult,
                     mech: MechanismSpec) -> DualCertificate:
    """Certificate for power-scheme equilibria: alpha_j = (bid total)^(1+e).

    For the modified scheme the totals are taken over the thresholded,
    rescaled bids.  Every item needs a positive total; beta_i is the
    concavity gap v - sum_j d_j * dv/dd_j for uncapped agents (zero for
    linear valuations) and the budget for capped ones.
    """
    if mech.scheme not in ("power", "modified"):
        raise UsageError("the power certificate needs a power or modified scheme")
    bids = eq.bids
    if mech.scheme == "modified":
        bids = transform_bids_modified(bids, mech.n_agents, mech.eps, mech.bid_cap)
    totals = bids.sum(axis=0)
    if np.any(totals <= 0.0):
        raise PreconditionError(
            "every item needs a positive (transformed) bid total for the "
            "power certificate")
    alpha = totals ** (1.0 + mech.power_exponent)
    beta = np.empty(instance.n)
    for i, agent in enumerate(instance.agents):
        d = eq.allocation.shares[i]
        value = eval_valuation(agent.valuation, d)
        if value < agent.budget:
            beta[i] = value - float(np.sum(_euler_terms(agent.valuation, d)))
        else:
            beta[i] = agent.budget
    return DualCertificate(alpha=alpha, beta=beta, tag="power-PM")


@dataclass
class FeasibilityReport:
    min_slack: float
    worst_assignment: list[tuple[int, int, float]]
    feasible: bool

    def to_dict(self) -> dict:
        return {"min_slack": self.min_slack,
                "worst_assignment": [[int(i), int(j), float(f)]
                                     for i, j, f in self.worst_assignment],
                "feasible": self.feasible}


def _agent_fraction_grid(m: int, grid: AssignmentGrid,
                         enum_budget: int) -> np.ndarray:
    fracs = grid.fractions()
    count = len(fracs) ** m
    if count > enum_budget:
        raise EnumerationBudgetError(
            f"{count} per-agent assignments exceed the budget of {enum_budget}")
    mesh = np.meshgrid(*([fracs] * m), indexing="ij")
    return np.column_stack([a.ravel() for a in mesh])


def check_dual_feasibility(cert: DualCertificate, instance: Instance,
                           grid: AssignmentGrid,
                           enum_budget: int = 5_000_000) -> FeasibilityReport:
    """Verify the per-agent dual constraints over all grid fraction vectors.

    The assignment-level constraint decomposes into one inequality per
    agent, so it suffices to range each agent's fractions over the full
    grid cube (a superset of what joint assignments allow, hence sound).
    """
    combos = _agent_fraction_grid(instance.m, grid, enum_budget)
    min_slack = math.inf
    worst: list[tuple[int, int, float]] = []
    budgets = instance.budgets()
    for i, agent in enumerate(instance.agents):
        vals = np.zeros(len(combos))
        for j in range(instance.m):
            vals += _item_values(agent.valuation, j, combos[:, j])
        slack = combos @ cert.alpha + cert.beta[i] - np.minimum(budgets[i], vals)
        pos = int(np.argmin(slack))
        if slack[pos] < min_slack:
            min_slack = float(slack[pos])
            worst = [(i, j, float(combos[pos, j])) for j in range(instance.m)]
    return FeasibilityReport(min_slack=min_slack, worst_assignment=worst,
                             feasible=min_slack >= -1e-8)


def check_dual_feasibility_joint(cert: DualCertificate, instance: Instance,
                                 grid: AssignmentGrid,
                                 enum_budget: int = 200_000) -> FeasibilityReport:
    """Spot-check the joint assignment constraints at tiny sizes.

    Enumerates per-item splits with agent fractions summing to at most 1
    (items may be partially assigned) and checks the full dual constraint.
    Defence in depth for the per-agent reduction; keep n*m small.
    """
    n, m = instance.n, instance.m
    k = grid.levels
    splits = []
    for total in range(k + 1):
        splits.append(_compositions(total, n))
    per_item = np.vstack(splits) * grid.step  # (S, n), sums <= 1
    count = len(per_item) ** m
    if count > enum_budget:
        raise EnumerationBudgetError(
            f"{count} joint assignments exceed the budget of {enum_budget}")
    budgets = instance.budgets()
    min_slack = math.inf
    worst: list[tuple[int, int, float]] = []
    idx_sets = itertools.product(range(len(per_item)), repeat=m)
    for combo in idx_sets:
        shares = np.column_stack([per_item[c] for c in combo])  # (n, m)
        c_s = 0.0
        for i, agent in enumerate(instance.agents):
            c_s += min(budgets[i], eval_valuation(agent.valuation, shares[i]))
        lhs = float((shares * cert.alpha[None, :]).sum() + cert.beta.sum())
        slack = lhs - c_s
        if slack < min_slack:
            min_slack = slack
            worst = [(i, j, float(shares[i, j]))
                     for i in range(n) for j in range(m) if shares[i, j] > 0]
    return FeasibilityReport(min_slack=min_slack, worst_assignment=worst,
                             feasible=min_slack >= -1e-8)


@dataclass
class PoaReport:
    lw_eq: float
    opt_concave: float
    opt_grid: float
    dual_obj: float
    ratio: float
    certified_ratio: float
    zero_welfare: bool

    def to_dict(self) -> dict:
        return {"lw_eq": self.lw_eq, "opt_concave": self.opt_concave,
                "opt_grid": self.opt_grid, "dual_obj": self.dual_obj,
                "ratio": self.ratio, "certified_ratio": self.certified_ratio,
                "zero_welfare": self.zero_welfare}


def poa_report(instance: Instance, eq: EquilibriumResult, cert: DualCertificate,
               grid: AssignmentGrid, params: SolverParams | None = None,
               enum_budget: int = 5_000_000) -> PoaReport:
    """Price-of-anarchy ratios for one equilibrium.

    ``ratio`` compares the better of the two optimal-welfare routes with the
    equilibrium welfare; ``certified_ratio`` uses the certificate objective,
    which upper-bounds the optimum whenever the certificate is feasible.  A
    zero-welfare equilibrium with a positive optimum is reported as an
    infinite ratio and flagged.
    """
    lw_eq = liquid_welfare(instance, eq.allocation)
    opt_c = optimal_lw_concave(instance, params).value
    opt_g = optimal_lw_grid(instance, grid, enum_budget).value
    if opt_c < opt_g - 5e-3 * max(1.0, opt_g):
        logger.warning("concave welfare solve %.9g fell well below the grid "
                       "value %.9g; treating the grid value as authoritative",
                       opt_c, opt_g)
    opt = max(opt_c, opt_g)
    dual_obj = cert.objective
    if lw_eq <= 0.0:
        zero = opt > 0.0
        ratio = math.inf if zero else 1.0
        certified = math.inf if zero else 1.0
    else:
        zero = False
        ratio = opt / lw_eq
        certified = dual_obj / lw_eq
    return PoaReport(lw_eq=lw_eq, opt_concave=opt_c, opt_grid=opt_g,
                     dual_obj=dual_obj, ratio=ratio,
                     certified_ratio=certified, zero_welfare=zero)
