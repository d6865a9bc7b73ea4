"""Payment schemes for proportional-share auctions.

Four schemes are provided:

``standard``
    Pay-your-bid (the classic Kelly mechanism): p_ij = b_ij.
``general``
    Integral scheme driven by user-supplied shape functions (g, h):
    p_ij = B_-ij * int_0^{b_ij} g(t + B_-ij) / (t + B_-ij)^2 dt + h(B_-ij),
    where B_-ij is the total bid of the other agents on item j.  Evaluated
    by adaptive quadrature; used mainly as an oracle for the closed forms.
``power``
    The general scheme with g(u) = u^(1+e) and h(u) = g(u)/e, where
    e = (n-1)*eps >= 1.  The integral collapses to the closed form
    p_ij = B_-ij * B_j^e / e, and the per-item revenue identity
    eps * sum_i p_ij = B_j^(1+e) holds for every bid matrix.
``modified``
    The power scheme applied to thresholded, rescaled bids
    b_ij = max(raw_ij - 1/e, 0) / (n*W), which keeps every payment at or
    below the raw bid that produced it.  See ``payment_modified`` for the
    treatment of agents whose thresholded bid is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    AssumptionViolationError,
    DegenerateColumnError,
    InternalInvariantError,
    QuadratureError,
    UsageError,
)
from .model import Allocation, allocate_proportional, validate_bids

SCHEMES = ("standard", "general", "power", "modified")


@dataclass(frozen=True)
class MechanismSpec:
    """Allocation rule plus payment scheme selection and parameters.

    ``eps`` and ``n_agents`` matter for the power and modified schemes and
    must satisfy eps * (n_agents - 1) >= 1 so that payments are convex in
    the own bid (which makes the agents' programs concave).  ``bid_cap``
    is the public bound W >= 1 on raw bids under the modified scheme.
    """

    scheme: str
    n_agents: int
    eps: float | None = None
    bid_cap: float | None = None
    quad_rel_tol: float = 1e-10
    quad_max_subdiv: int = 1_000_000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise UsageError(f"unknown payment scheme {self.scheme!r}")
        if self.n_agents < 1:
            raise UsageError("n_agents must be >= 1")
        if self.scheme in ("power", "modified"):
            if self.n_agents < 2:
                raise UsageError(f"the {self.scheme} scheme requires n >= 2")
            if self.eps is None:
                raise UsageError(f"the {self.scheme} scheme requires eps")
            if self.eps * (self.n_agents - 1) < 1.0 - 1e-15:
                raise UsageError(
                    "need eps * (n - 1) >= 1; smaller values make the payment "
                    "concave in the own bid and equilibria may not exist")
        if self.scheme == "modified":
            if self.bid_cap is None or self.bid_cap < 1.0:
                raise UsageError("the modified scheme requires a bid cap W >= 1")
        if not (self.quad_rel_tol > 0):
            raise UsageError("quad_rel_tol must be positive")
        if self.quad_max_subdiv < 1:
            raise UsageError("quad_max_subdiv must be >= 1")

    @property
    def power_exponent(self) -> float:
        """e = (n - 1) * eps, the exponent that shapes g(u) = u^(1+e)."""
        if self.eps is None:
            raise UsageError(f"scheme {self.scheme!r} has no eps parameter")
        return (self.n_agents - 1) * self.eps

    @property
    def threshold(self) -> float:
        """Bid threshold 1/((n-1)*eps) of the modified scheme."""
        return 1.0 / self.power_exponent

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "eps": self.eps, "bid_cap": self.bid_cap,
                "quad_rel_tol": self.quad_rel_tol,
                "quad_max_subdiv": self.quad_max_subdiv}


def payment_standard(bids) -> np.ndarray:
    """Pay-your-bid: the payment matrix equals the bid matrix."""
    return validate_bids(bids).copy()


# ---------------------------------------------------------------------------
# Adaptive quadrature for the general integral scheme.
# ---------------------------------------------------------------------------

def _simpson(f, a, fa, b, fb):
    mid = 0.5 * (a + b)
    fm = f(mid)
    return mid, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def adaptive_quadrature(f, a: float, b: float, rel_tol: float = 1e-10,
                        max_subdiv: int = 1_000_000) -> float:
    """Integrate f over [a, b] by adaptive Simpson subdivision.

    The error target is relative to the magnitude of the whole integral
    (with an absolute floor to keep near-zero integrals cheap).  Raises
    QuadratureError with the best estimate when the subdivision budget
    runs out before the local error criterion is met everywhere.
    """
    if b <= a:
        return 0.0
    fa, fb = f(a), f(b)
    mid, fm, whole = _simpson(f, a, fa, b, fb)
    budget = max_subdiv
    tol = max(rel_tol * abs(whole), 1e-300)

    def recurse(a, fa, m, fm, b, fb, estimate, tol):
        nonlocal budget
        if budget <= 0:
            raise QuadratureError(
                f"quadrature budget of {max_subdiv} subdivisions exhausted "
                f"(estimate so far {estimate:.6g})")
        budget -= 2
        lm, flm, left = _simpson(f, a, fa, m, fm)
        rm, frm, right = _simpson(f, m, fm, b, fb)
        err = left + right - estimate
        if abs(err) <= 15.0 * tol:
            return left + right + err / 15.0
        return (recurse(a, fa, lm, flm, m, fm, left, tol / 2.0)
                + recurse(m, fm, rm, frm, b, fb, right, tol / 2.0))

    return recurse(a, fa, mid, fm, b, fb, whole, tol)


def payment_general_quadrature(bids, g, h, spec: MechanismSpec) -> np.ndarray:
    """Integral payment scheme for user-supplied shape functions.

    ``g`` must be nonnegative and non-decreasing, ``h`` nonnegative; both
    take the rivals' bid total.  Items where an agent faces a zero rival
    total are allowed only if g and h vanish there (otherwise the scheme
    would divide by zero).
    """
    b = validate_bids(bids)
    n, m = b.shape
    totals = b.sum(axis=0)
    p = np.zeros_like(b)
    for j in range(m):
        for i in range(n):
            c = totals[j] - b[i, j]
            if c == 0.0:
                try:
                    h0 = float(h(0.0))
                except (ZeroDivisionError, ValueError, FloatingPointError) as exc:
                    raise DegenerateColumnError(
                        f"item {j}: rival bid total is zero and h is undefined "
                        f"there ({exc})") from exc
                if not math.isfinite(h0) or (h0 != 0.0 and b[i, j] == 0.0 and totals[j] == 0.0):
                    raise DegenerateColumnError(
                        f"item {j}: rival bid total is zero and the scheme "
                        f"does not vanish there")
                p[i, j] = h0
                continue
            integral = adaptive_quadrature(
                lambda t, c=c: g(t + c) / (t + c) ** 2,
                0.0, float(b[i, j]),
                rel_tol=spec.quad_rel_tol, max_subdiv=spec.quad_max_subdiv)
            p[i, j] = c * integral + float(h(c))
    return p


def power_shape_functions(n: int, eps: float):
    """The (g, h) pair that realises the power scheme in the general form."""
    e = (n - 1) * eps
    return (lambda u: u ** (1.0 + e)), (lambda u: u ** (1.0 + e) / e)


def payment_power_closed_form(bids, n: int, eps: float) -> np.ndarray:
    """Closed-form power-scheme payments: p_ij = B_-ij * B_j^e / e.

    Derivation: with g(u) = u^(1+e) the integrand of the general scheme is
    (t + B_-ij)^(e-1), whose antiderivative makes the integral equal
    (B_j^e - B_-ij^e) / e; adding h(B_-ij)/e's contribution cancels the
    lower limit, leaving B_-ij * B_j^e / e.  A zero rival total therefore
    yields a zero payment.  Note an agent bidding zero against positive
    rivals still owes B_-ij^(1+e) / e.
    """
    b = validate_bids(bids)
    if n != b.shape[0]:
        raise UsageError("n must match the number of bid rows")
    e = (n - 1) * eps
    if n < 2 or e < 1.0 - 1e-15:
        raise UsageError("power payments need n >= 2 and eps * (n - 1) >= 1")
    totals = b.sum(axis=0)
    rivals = totals[None, :] - b
    return rivals * totals[None, :] ** e / e


def price_identity_residual(bids, spec: MechanismSpec) -> np.ndarray:
    """Per-item residual of the revenue identity eps * sum_i p_ij = B_j^(1+e).

    The identity is algebraic in the power payment formula, so it holds for
    every bid matrix, not only equilibria.  For the modified scheme the
    formula's identity is evaluated on the thresholded, rescaled bids with
    the power formula applied uniformly to all agents.
    """
    if spec.scheme not in ("power", "modified"):
        raise UsageError("the revenue identity applies to the power and "
                         "modified schemes only")
    b = validate_bids(bids, n=spec.n_agents)
    if spec.scheme == "modified":
        b = transform_bids_modified(b, spec.n_agents, spec.eps, spec.bid_cap)
    p = payment_power_closed_form(b, spec.n_agents, spec.eps)
    totals = b.sum(axis=0)
    g_of_total = totals ** (1.0 + spec.power_exponent)
    return np.abs(spec.eps * p.sum(axis=0) - g_of_total)


# ---------------------------------------------------------------------------
# The modified (thresholded) mechanism.
# ---------------------------------------------------------------------------

def transform_bids_modified(raw, n: int, eps: float, bid_cap: float) -> np.ndarray:
    """Threshold raw bids at 1/((n-1)*eps) and rescale by 1/(n*W).

    Raw bids must lie in [0, W]; a violation is rejected naming the entry.
    Every output lies in [0, 1/n), so item totals stay below 1.
    """
    b = validate_bids(raw)
    if bid_cap < 1.0:
        raise UsageError("the modified scheme requires a bid cap W >= 1")
    over = np.argwhere(b > bid_cap)
    if over.size:
        i, j = over[0]
        raise AssumptionViolationError(
            f"raw bid at agent {i}, item {j} is {b[i, j]:.6g}, above the "
            f"public cap W = {bid_cap:.6g}")
    e = (n - 1) * eps
    threshold = 1.0 / e
    return np.maximum(b - threshold, 0.0) / (n * bid_cap)


def payment_modified(raw, n: int, eps: float, bid_cap: float) -> np.ndarray:
    """Payments of the thresholded mechanism, capped by the raw bids.

    The power closed form is applied to the transformed bids, except that
    an agent whose transformed bid is zero on an item is not in that item's
    auction and owes nothing there.  Without that carve-out the fixed
    charge h(B_-ij) would be levied on agents that receive nothing and
    could exceed an arbitrarily small raw bid, breaking the payment <= bid
    guarantee this mechanism exists to provide.

    With the carve-out the cap is provable: a participating agent has
    raw_ij >= 1/e while its payment is at most B_j^(1+e) / e <= 1/e,
    because item totals of transformed bids never reach 1.
    """
    b = validate_bids(raw)
    if n != b.shape[0]:
        raise UsageError("n must match the number of bid rows")
    t = transform_bids_modified(b, n, eps, bid_cap)
    p = payment_power_closed_form(t, n, eps)
    p[t == 0.0] = 0.0
    violations = p > b + 1e-12
    if np.any(violations):
        i, j = np.argwhere(violations)[0]
        raise InternalInvariantError(
            f"modified-scheme payment {p[i, j]:.6g} exceeds raw bid "
            f"{b[i, j]:.6g} at agent {i}, item {j}; this must never happen")
    return p


def allocation_for_modified(raw, n: int, eps: float, bid_cap: float) -> Allocation:
    """Proportional allocation on thresholded raw bids.

    The 1/(n*W) rescaling cancels out of proportional shares, so it is
    skipped here; columns where every raw bid is at or below the threshold
    degenerate to an equal split.
    """
    b = validate_bids(raw)
    if n != b.shape[0]:
        raise UsageError("n must match the number of bid rows")
    e = (n - 1) * eps
    threshold = 1.0 / e
    if bid_cap < 1.0:
        raise UsageError("the modified scheme requires a bid cap W >= 1")
    if np.any(b > bid_cap):
        raise AssumptionViolationError("raw bids must not exceed the cap W")
    return allocate_proportional(np.maximum(b - threshold, 0.0))


def mechanism_outcome(bids, spec: MechanismSpec):
    """Allocation and payments for a bid matrix under the chosen scheme.

    For the modified scheme ``bids`` are the raw bids; other schemes take
    bids directly.  The general scheme is not supported here because it
    needs its shape functions; call payment_general_quadrature instead.
    """
    if spec.scheme == "standard":
        return allocate_proportional(bids), payment_standard(bids)
    if spec.scheme == "power":
        return (allocate_proportional(bids),
                payment_power_closed_form(bids, spec.n_agents, spec.eps))
    if spec.scheme == "modified":
        return (allocation_for_modified(bids, spec.n_agents, spec.eps, spec.bid_cap),
                payment_modified(bids, spec.n_agents, spec.eps, spec.bid_cap))
    raise UsageError("general-scheme outcomes need explicit shape functions")
