"""Best responses for the agents' concave bidding programs.

An agent facing fixed rival bids solves

    max  v(d(x)) - rho * P(x)
    s.t. P(x) <= W          (budget)
         v(d(x)) >= P(x)    (return on spend)
         x >= 0

where d_j = x_j / (x_j + c_j), c_j is the rivals' bid total on item j and
P is the scheme's payment.  The objective and constraints are separable
across items except for the two scalar constraints, so every stationary
point lies on a one-parameter curve x*(kappa) indexed by

    kappa = (rho + lambda + mu) / (1 + mu),

the effective price of money.  Along that curve the budget slack is
non-decreasing and the return-on-spend slack is non-decreasing up to
kappa = 1 (where it equals the maximal utility) and non-increasing after.
The solver therefore finds the optimum by monotone bisection: first the
per-item first-order condition in x_j for a given kappa, then the smallest
feasible kappa.  This yields the exact multipliers as a byproduct.

Items nobody else bids on are claimed with a tiny bid before the curve
search; under the power-family schemes such a claim is free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import InfeasibleProgramError, PreconditionError, UsageError
from .model import (
    FEASIBILITY_TOL,
    AgentSpec,
    Instance,
    eval_gradient,
    eval_valuation,
    validate_bids,
)
from .payments import MechanismSpec, mechanism_outcome

_ACTIVE_TOL = 1e-7
_BISECT_ITERS = 100
_KAPPA_CAP = 1e12


@dataclass(frozen=True)
class SolverParams:
    """Knobs for the continuous solvers; defaults suit desk-scale games."""

    step_init: float = 0.25
    step_shrink: float = 0.5
    max_iters: int = 4000
    kkt_tol: float = 1e-9
    grid_step: float = 1e-3
    bid_upper_strategy: str = "auto"
    claim_bid: float = 1e-6

    def to_dict(self) -> dict:
        return {"step_init": self.step_init, "step_shrink": self.step_shrink,
                "max_iters": self.max_iters, "kkt_tol": self.kkt_tol,
                "grid_step": self.grid_step,
                "bid_upper_strategy": self.bid_upper_strategy,
                "claim_bid": self.claim_bid}


@dataclass
class BestResponseResult:
    """Outcome of a best-response computation for one agent."""

    bids: np.ndarray
    objective: float
    budget_active: bool
    ros_active: bool
    lower_active: np.ndarray
    iterations: int
    kkt_residual: float
    feasible: bool
    lam: float = 0.0
    mu: float = 0.0


@dataclass
class KktReport:
    """Multipliers recovered at a bid profile plus stationarity residuals."""

    lam: float
    mu: float
    xi: np.ndarray
    stationarity: np.ndarray
    comp_budget: float
    comp_ros: float
    comp_lower: np.ndarray
    max_residual: float


# ---------------------------------------------------------------------------
# Scheme-specific pieces: per-item payment, its derivative, and the share.
# ---------------------------------------------------------------------------

class _ItemModel:
    """Per-item geometry of one agent's problem against fixed rivals.

    Works in the scheme's native bid space except for the modified scheme,
    which is handled by the caller in transformed space (it reduces to the
    power scheme there).
    """

    def __init__(self, scheme: str, c: float, exponent: float | None):
        self.scheme = scheme
        self.c = c
        self.e = exponent

    def share(self, x: float) -> float:
        return x / (x + self.c) if x + self.c > 0 else 0.0

    def pay(self, x: float) -> float:
        if self.scheme == "standard":
            return x
        if self.c == 0.0:
            return 0.0
        return self.c * (x + self.c) ** self.e / self.e

    def dpay(self, x: float) -> float:
        if self.scheme == "standard":
            return 1.0
        if self.c == 0.0:
            return 0.0
        return self.c * (x + self.c) ** (self.e - 1.0)


def _marginal_value(kind, coeff, q, shift, d):
    if coeff == 0.0:
        return 0.0
    if kind == "linear":
        return coeff
    if kind == "power-sum":
        if d == 0.0 and q < 1.0:
            return math.inf
        return coeff * q * d ** (q - 1.0)
    return coeff / (shift + d)


def _item_value(kind, coeff, q, shift, d):
    if kind == "linear":
        return coeff * d
    if kind == "power-sum":
        return coeff * d**q
    return coeff * math.log1p(d / shift)


def _solve_item_foc(kind, coeff, q, shift, item: _ItemModel, kappa: float,
                    cap: float) -> tuple[float, int]:
    """Maximise w(d(x)) - kappa * pay(x) over x in [0, cap].

    Returns the maximiser and the number of bisection steps used.  The
    first-order condition w'(d) * c / B^2 = kappa * pay'(x) has a strictly
    decreasing left-minus-right side, so bisection is safe; linear and
    log-sum valuations admit closed forms under the standard scheme, and
    linear under the power scheme.
    """
    c = item.c
    if cap <= 0.0 or coeff == 0.0:
        return 0.0, 0
    if kappa <= 0.0:
        return cap, 0

    if item.scheme == "standard":
        if kind == "linear":
            b_tot = math.sqrt(coeff * c / kappa)
            return min(max(b_tot - c, 0.0), cap), 0
        if kind == "log-sum":
            disc = kappa * kappa * c * c + 4.0 * kappa * (1.0 + shift) * coeff * c
            b_tot = (kappa * c + math.sqrt(disc)) / (2.0 * kappa * (1.0 + shift))
            return min(max(b_tot - c, 0.0), cap), 0
    elif kind == "linear":
        # power scheme: w' = kappa * B^(1+e)
        b_tot = (coeff / kappa) ** (1.0 / (1.0 + item.e))
        return min(max(b_tot - c, 0.0), cap), 0

    def foc(x):
        b_tot = x + c
        lhs = _marginal_value(kind, coeff, q, shift, x / b_tot) * c / b_tot**2
        return lhs - kappa * item.dpay(x)

    if foc(cap) >= 0.0:
        return cap, 1
    lo_val = foc(min(1e-12, cap / 2))
    if not (lo_val > 0.0):
        return 0.0, 1
    lo, hi = 0.0, cap
    steps = 0
    for _ in range(_BISECT_ITERS):
        steps += 1
        mid = 0.5 * (lo + hi)
        if foc(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return 0.5 * (lo + hi), steps


class _AgentProgram:
    """One agent's program against fixed rivals, in scheme-native bid space.

    ``active`` restricts the items the agent may bid on (used by the
    modified scheme's participation enumeration); inactive contested items
    contribute zero share and zero payment, inactive uncontested items fall
    back to the equal-split share.
    """

    def __init__(self, agent: AgentSpec, rival_totals: np.ndarray, scheme: str,
                 mech: MechanismSpec, params: SolverParams,
                 active: np.ndarray | None = None):
        self.agent = agent
        self.c = np.asarray(rival_totals, dtype=float)
        self.m = self.c.size
        self.scheme = scheme
        self.mech = mech
        self.params = params
        self.n = mech.n_agents
        self.active = np.ones(self.m, bool) if active is None else active
        exponent = mech.power_exponent if scheme != "standard" else None
        self.items = [_ItemModel(scheme, float(cj), exponent) for cj in self.c]
        val = agent.valuation
        self.kinds = val.kind
        self.coeffs = np.asarray(val.coeffs, dtype=float)
        self.qs = np.asarray(val.q, dtype=float) if val.q is not None else None
        self.shift = val.shift
        self.caps = self._bid_caps()
        self.claims = self._plan_claims()
        self.iterations = 0

    def _bid_caps(self) -> np.ndarray:
        caps = np.zeros(self.m)
        budget = self.agent.budget
        for j in range(self.m):
            if not self.active[j] or self.c[j] == 0.0:
                continue
            if self.scheme == "standard":
                caps[j] = budget
            else:
                e = self.mech.power_exponent
                b_tot = (budget * e / self.c[j]) ** (1.0 / e)
                caps[j] = max(b_tot - self.c[j], 0.0)
        return caps

    def extra_cap(self, caps_override: np.ndarray | None):
        if caps_override is not None:
            self.caps = np.minimum(self.caps, caps_override)

    def _plan_claims(self) -> dict[int, float]:
        """Uncontested items worth grabbing with a minimal positive bid."""
        claims = {}
        claim = min(self.params.claim_bid, self.agent.budget / (4.0 * self.m + 4.0))
        for j in range(self.m):
            if not self.active[j] or self.c[j] != 0.0:
                continue
            gain = (self._w(j, 1.0) - self._w(j, 1.0 / self.n))
            if gain > 0.0:
                claims[j] = claim
        return claims

    def _w(self, j, d):
        q = self.qs[j] if self.qs is not None else 1.0
        return _item_value(self.kinds, self.coeffs[j], q, self.shift, d)

    def bids_at(self, kappa: float) -> np.ndarray:
        x = np.zeros(self.m)
        for j in range(self.m):
            if not self.active[j]:
                continue
            if self.c[j] == 0.0:
                x[j] = self.claims.get(j, 0.0)
                continue
            q = self.qs[j] if self.qs is not None else 1.0
            xj, steps = _solve_item_foc(self.kinds, self.coeffs[j], q,
                                        self.shift, self.items[j], kappa,
                                        self.caps[j])
            self.iterations += steps
            x[j] = xj
        return x

    def shares(self, x: np.ndarray) -> np.ndarray:
        d = np.zeros(self.m)
        for j in range(self.m):
            if self.c[j] > 0.0:
                d[j] = x[j] / (x[j] + self.c[j]) if self.active[j] else 0.0
            else:
                d[j] = 1.0 if x[j] > 0.0 else 1.0 / self.n
        return d

    def payments(self, x: np.ndarray) -> np.ndarray:
        p = np.zeros(self.m)
        for j in range(self.m):
            if not self.active[j]:
                continue
            if self.c[j] == 0.0:
                p[j] = x[j] if self.scheme == "standard" else 0.0
            else:
                p[j] = self.items[j].pay(x[j])
        return p

    def value(self, x: np.ndarray) -> float:
        d = self.shares(x)
        return float(sum(self._w(j, d[j]) for j in range(self.m)))

    def slacks(self, x: np.ndarray) -> tuple[float, float]:
        spent = float(self.payments(x).sum())
        val = self.value(x)
        return self.agent.budget - spent, val - spent

    def objective(self, x: np.ndarray) -> float:
        return self.value(x) - self.agent.rho * float(self.payments(x).sum())

    # -- kappa search -------------------------------------------------------

    def solve(self) -> tuple[np.ndarray, float, float, bool]:
        """Return (bids, lam, mu, feasible) at the program's optimum.

        Raises InfeasibleProgramError when no bid vector satisfies both
        constraints (possible under the power scheme, whose fixed charges
        apply regardless of the own bid).
        """
        rho = self.agent.rho
        tol = FEASIBILITY_TOL

        def feas(sb, sr):
            return sb >= -tol and sr >= -tol

        x0 = self.bids_at(rho)
        sb0, sr0 = self.slacks(x0)
        if feas(sb0, sr0):
            return x0, 0.0, 0.0, True

        kappa_ros = rho
        if sr0 < -tol:
            x1 = self.bids_at(1.0)
            _, sr1 = self.slacks(x1)
            if sr1 < -tol:
                raise InfeasibleProgramError(
                    "return-on-spend constraint unsatisfiable: even the "
                    f"utility-maximal bid leaves slack {sr1:.3g}",
                    best_bids=x1, min_slack=sr1)
            lo, hi = rho, 1.0
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                _, sr = self.slacks(self.bids_at(mid))
                if sr >= 0.0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-14 * max(1.0, hi):
                    break
            kappa_ros = hi

        kappa_budget = rho
        if sb0 < -tol:
            hi = max(1.0, 2.0 * max(rho, 1e-6))
            sb_hi, _ = self.slacks(self.bids_at(hi))
            doubles = 0
            while sb_hi < 0.0 and hi < _KAPPA_CAP:
                hi *= 4.0
                sb_hi, _ = self.slacks(self.bids_at(hi))
                doubles += 1
            if sb_hi < 0.0:
                xb = self.bids_at(hi)
                raise InfeasibleProgramError(
                    "budget constraint unsatisfiable: fixed charges exceed "
                    f"the budget by {-sb_hi:.3g}",
                    best_bids=xb, min_slack=sb_hi)
            lo = rho
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                sb, _ = self.slacks(self.bids_at(mid))
                if sb >= 0.0:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-14 * max(1.0, hi):
                    break
            kappa_budget = hi

        kappa = max(rho, kappa_ros, kappa_budget)
        x = self.bids_at(kappa)
        sb, sr = self.slacks(x)
        if min(sb, sr) < -1e-8:
            raise InfeasibleProgramError(
                "budget and return-on-spend constraints cannot be met "
                f"together (best joint slack {min(sb, sr):.3g})",
                best_bids=x, min_slack=min(sb, sr))

        lam = mu = 0.0
        if kappa > rho + 1e-15:
            if kappa_budget >= kappa_ros:
                lam, mu = kappa - rho, 0.0
            else:
                mu = (kappa - rho) / max(1.0 - kappa, 1e-12)
                lam = 0.0
        return x, lam, mu, True


def _rival_totals(others, m: int) -> np.ndarray:
    o = np.asarray(others, dtype=float)
    if o.ndim != 2 or o.shape[1] != m:
        raise UsageError("rival bids must be a 2-D array with one row per rival")
    if np.any(o < 0) or not np.all(np.isfinite(o)):
        raise UsageError("rival bids must be finite and nonnegative")
    return o.sum(axis=0)


def agent_objective(agent: AgentSpec, own_bids, others, mech: MechanismSpec) -> float:
    """Hybrid objective v_i(d_i) - rho_i * (total payment) at a bid profile."""
    own = np.asarray(own_bids, dtype=float).reshape(1, -1)
    stacked = np.vstack([own, np.asarray(others, dtype=float)])
    validate_bids(stacked, n=mech.n_agents)
    alloc, pay = mechanism_outcome(stacked, mech)
    value = eval_valuation(agent.valuation, alloc.shares[0])
    return float(value - agent.rho * pay[0].sum())


def _native_result(program: _AgentProgram, x: np.ndarray, lam: float, mu: float,
                   feasible: bool, mech: MechanismSpec,
                   to_native=None) -> BestResponseResult:
    sb, sr = program.slacks(x)
    native = x if to_native is None else to_native(x)
    resid = _stationarity_residuals(program, x, lam, mu)
    return BestResponseResult(
        bids=native,
        objective=program.objective(x),
        budget_active=abs(sb) <= _ACTIVE_TOL,
        ros_active=abs(sr) <= _ACTIVE_TOL,
        lower_active=x <= _ACTIVE_TOL,
        iterations=program.iterations,
        kkt_residual=float(np.max(resid)) if resid.size else 0.0,
        feasible=feasible,
        lam=lam, mu=mu)


def _stationarity_residuals(program: _AgentProgram, x, lam, mu) -> np.ndarray:
    rho = program.agent.rho
    out = []
    for j in range(program.m):
        if not program.active[j] or program.c[j] == 0.0:
            continue
        b_tot = x[j] + program.c[j]
        q = program.qs[j] if program.qs is not None else 1.0
        grad = _marginal_value(program.kinds, program.coeffs[j], q,
                               program.shift, x[j] / b_tot)
        g_term = grad * program.c[j] / b_tot**2
        phi = program.items[j].dpay(x[j])
        r = (1.0 + mu) * g_term - (rho + lam + mu) * phi
        if x[j] > _ACTIVE_TOL:
            out.append(abs(r))
        else:
            out.append(max(0.0, r))  # at the boundary only upward force counts
    return np.asarray(out)


def best_response(agent: AgentSpec, others, mech: MechanismSpec,
                  params: SolverParams | None = None) -> BestResponseResult:
    """Exact best response of one agent to fixed rival bids.

    ``others`` holds the rivals' bids, one row per rival, in the scheme's
    native space (raw bids for the modified scheme).  The returned bids are
    feasible for the agent's budget and return-on-spend constraints, and by
    concavity of the program the KKT point found is a global optimum.
    """
    params = params or SolverParams()
    m = agent.valuation.m
    totals = _rival_totals(others, m)
    if np.asarray(others).shape[0] != mech.n_agents - 1:
        raise UsageError("rival matrix must have n_agents - 1 rows")

    if mech.scheme in ("standard", "power"):
        program = _AgentProgram(agent, totals, mech.scheme, mech, params)
        x, lam, mu, ok = program.solve()
        return _native_result(program, x, lam, mu, ok, mech)

    if mech.scheme != "modified":
        raise UsageError(f"best responses are not defined for scheme "
                         f"{mech.scheme!r} without shape functions")

    # Modified scheme: work on transformed bids, where payments follow the
    # power formula, and enumerate participation sets because withdrawing
    # from an item also cancels its fixed charge.
    from .payments import transform_bids_modified

    theta = mech.threshold
    cap_w = mech.bid_cap
    t_others = transform_bids_modified(np.asarray(others, dtype=float),
                                       mech.n_agents, mech.eps, cap_w)
    t_totals = t_others.sum(axis=0)
    y_cap = (cap_w - theta) / (mech.n_agents * cap_w)
    import dataclasses
    params = dataclasses.replace(
        params, claim_bid=min(params.claim_bid, y_cap / 2.0))

    def to_raw(y):
        raw = np.where(y > 0.0, theta + y * mech.n_agents * cap_w, 0.0)
        return np.minimum(raw, cap_w)

    best = None
    best_obj = -math.inf
    total_iters = 0
    for mask_bits in range(2 ** m):
        active = np.array([(mask_bits >> j) & 1 == 1 for j in range(m)])
        program = _AgentProgram(agent, t_totals, "power", mech, params,
                                active=active)
        program.extra_cap(np.full(m, y_cap))
        try:
            y, lam, mu, ok = program.solve()
        except InfeasibleProgramError:
            continue
        total_iters += program.iterations
        obj = program.objective(y)
        if obj > best_obj + 1e-15:
            best_obj = obj
            best = (program, y, lam, mu)
    if best is None:
        # the empty participation set pays nothing, so this cannot happen
        raise InfeasibleProgramError("no feasible participation set found")
    program, y, lam, mu = best
    program.iterations = total_iters
    result = _native_result(program, y, lam, mu, True, mech, to_native=to_raw)
    # recompute through the mechanism so dropped fixed charges are reflected
    result.objective = agent_objective(agent, result.bids, others, mech)
    return result


def best_response_grid_oracle(agent: AgentSpec, others, mech: MechanismSpec,
                              grid_step: float, bid_upper: float) -> BestResponseResult:
    """Exhaustive grid search over the agent's bid space; m <= 2 only.

    Serves as the independent oracle for the continuous solver.  Ties are
    broken toward the lexicographically smallest bid vector (the grid is
    enumerated in that order and the first maximiser returned).  When no
    grid point is feasible, the least-infeasible point is returned flagged.
    """
    m = agent.valuation.m
    if m > 2:
        raise UsageError("grid oracle supports at most two items")
    totals = _rival_totals(others, m)
    if np.asarray(others).shape[0] != mech.n_agents - 1:
        raise UsageError("rival matrix must have n_agents - 1 rows")

    axis = np.arange(0.0, bid_upper + grid_step / 2.0, grid_step)
    if axis.size == 0:
        axis = np.array([0.0])
    if m == 1:
        candidates = axis[:, None]
    else:
        a, b = np.meshgrid(axis, axis, indexing="ij")
        candidates = np.column_stack([a.ravel(), b.ravel()])

    n = mech.n_agents
    if mech.scheme == "modified":
        from .payments import transform_bids_modified
        theta = mech.threshold
        cap_w = mech.bid_cap
        candidates = np.minimum(candidates, cap_w)
        t_others = transform_bids_modified(np.asarray(others, dtype=float),
                                           n, mech.eps, cap_w)
        c = t_others.sum(axis=0)
        y = np.maximum(candidates - theta, 0.0) / (n * cap_w)
        tot = y + c[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(tot > 0.0, y / tot, 1.0 / n)
        e = mech.power_exponent
        pay = np.where(y > 0.0, c[None, :] * tot**e / e, 0.0)
        bids_eff = y
    else:
        c = totals
        tot = candidates + c[None, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            d = np.where(tot > 0.0,
                         np.where(c[None, :] > 0.0, candidates / tot,
                                  np.where(candidates > 0.0, 1.0, 1.0 / n)),
                         1.0 / n)
        if mech.scheme == "standard":
            pay = candidates.copy()
        elif mech.scheme == "power":
            e = mech.power_exponent
            pay = np.where(c[None, :] > 0.0,
                           c[None, :] * tot**e / np.where(c[None, :] > 0, e, 1.0),
                           0.0)
        else:
            raise UsageError(f"grid oracle does not support scheme {mech.scheme!r}")
        bids_eff = candidates

    val = agent.valuation
    coeffs = np.asarray(val.coeffs)
    value = np.zeros(len(candidates))
    for j in range(m):
        if val.kind == "linear":
            value += coeffs[j] * d[:, j]
        elif val.kind == "power-sum":
            value += coeffs[j] * d[:, j] ** val.q[j]
        else:
            value += coeffs[j] * np.log1p(d[:, j] / val.shift)

    spent = pay.sum(axis=1)
    objective = value - agent.rho * spent
    budget_slack = agent.budget - spent
    ros_slack = value - spent
    feasible = (budget_slack >= -FEASIBILITY_TOL) & (ros_slack >= -FEASIBILITY_TOL)

    if np.any(feasible):
        masked = np.where(feasible, objective, -np.inf)
        idx = int(np.argmax(masked))
        ok = True
    else:
        idx = int(np.argmax(np.minimum(budget_slack, ros_slack)))
        ok = False
    chosen = candidates[idx]
    return BestResponseResult(
        bids=chosen.copy(),
        objective=float(objective[idx]),
        budget_active=abs(budget_slack[idx]) <= grid_step,
        ros_active=abs(ros_slack[idx]) <= grid_step,
        lower_active=bids_eff[idx] <= 0.0,
        iterations=len(candidates),
        kkt_residual=math.nan,
        feasible=ok)


def kkt_residual(instance: Instance, bids, mech: MechanismSpec,
                 agent_index: int) -> KktReport:
    """Recover multipliers at a bid profile and report stationarity residuals.

    The stationarity system is linear in (lambda, mu, xi); multipliers fixed
    to zero by complementary slackness with the observed slacks are dropped
    and the rest solved by nonnegative least squares.  Under the power and
    modified schemes every item must have a positive rival bid total for the
    agent, otherwise the stationarity system is vacuous there and the call
    raises a PreconditionError.
    """
    b = validate_bids(bids, n=instance.n, m=instance.m)
    agent = instance.agents[agent_index]
    if mech.scheme == "modified":
        from .payments import transform_bids_modified
        work = transform_bids_modified(b, mech.n_agents, mech.eps, mech.bid_cap)
        scheme = "power"
    else:
        work = b
        scheme = mech.scheme
    alloc, pay = mechanism_outcome(b, mech)

    own = work[agent_index]
    totals = work.sum(axis=0)
    rivals = totals - own
    if scheme == "power" and np.any(rivals <= 0.0):
        raise PreconditionError(
            "stationarity under the power-family schemes needs a positive "
            "rival bid total on every item")
    if np.any(totals <= 0.0):
        raise PreconditionError("stationarity is undefined on items with a "
                                "zero bid total")

    d = alloc.shares[agent_index]
    grad = eval_gradient(agent.valuation, d)
    g_term = np.where(np.isfinite(grad), grad * rivals / totals**2, np.inf)
    if scheme == "standard":
        phi = np.ones(instance.m)
    else:
        e = mech.power_exponent
        phi = rivals * totals ** (e - 1.0)

    value = eval_valuation(agent.valuation, d)
    spent = float(pay[agent_index].sum())
    budget_slack = agent.budget - spent
    ros_slack = value - spent
    rho = agent.rho

    lam_free = budget_slack <= _ACTIVE_TOL
    mu_free = ros_slack <= _ACTIVE_TOL
    xi_free = own <= _ACTIVE_TOL

    finite = np.isfinite(g_term)
    finite_idx = np.flatnonzero(finite)
    base = (g_term - rho * phi)[finite]
    a_cols = []
    if lam_free:
        a_cols.append(-phi[finite])
    if mu_free:
        a_cols.append((g_term - phi)[finite])
    xi_idx = [j for j in finite_idx if xi_free[j]]
    for j in xi_idx:
        unit = np.zeros(finite_idx.size)
        unit[int(np.flatnonzero(finite_idx == j)[0])] = 1.0
        a_cols.append(unit)

    lam = mu = 0.0
    xi = np.zeros(instance.m)
    if a_cols and base.size:
        a_mat = np.column_stack(a_cols)
        sol, _ = nnls(a_mat, -base)
        k = 0
        if lam_free:
            lam = float(sol[k]); k += 1
        if mu_free:
            mu = float(sol[k]); k += 1
        for pos, j in enumerate(xi_idx):
            xi[j] = float(sol[k + pos])

    with np.errstate(invalid="ignore"):  # 0 * inf from unbounded gradients
        resid = g_term - rho * phi + mu * (g_term - phi) - lam * phi + xi
    stationarity = np.where(np.isfinite(resid), np.abs(resid), np.inf)
    return KktReport(
        lam=lam, mu=mu, xi=xi,
        stationarity=stationarity,
        comp_budget=abs(lam * budget_slack),
        comp_ros=abs(mu * ros_slack),
        comp_lower=np.abs(xi * own),
        max_residual=float(np.max(stationarity)) if stationarity.size else 0.0)
