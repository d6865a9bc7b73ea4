"""Randomised indivisible-item version of a proportional outcome.

A divisible proportional outcome converts to a lottery: item j goes to
agent i with probability b_ij / B_j, and the winner is charged
(B_j / b_ij) * p_ij.  Expected value and expected payment per agent then
match the divisible mechanism exactly, so the budget and return-on-spend
constraints hold in expectation.  The conversion is stated for linear
valuations, where per-item values add.

Randomness comes from numpy's Philox counter-based generator, so runs
reproduce bit-exactly across platforms from the recorded seed, and draw
ranges can be partitioned deterministically if sampling is parallelised.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateColumnError, UsageError
from .model import Instance, validate_bids
from .payments import MechanismSpec, mechanism_outcome

RNG_ALGORITHM = "philox"


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


@dataclass
class RandomizedOutcome:
    """One sampled assignment: a winner and a charge per item."""

    winners: np.ndarray
    charges: np.ndarray
    seed: int


def sample_outcome(bids, payments, seed: int) -> RandomizedOutcome:
    """Draw one indivisible outcome from a bid/payment pair.

    Every item must carry at least one positive bid; the lottery is
    undefined otherwise.  Winners always have a positive bid, so the
    charge (B_j / b_ij) * p_ij is finite.
    """
    b = validate_bids(bids)
    p = np.asarray(payments, dtype=float)
    if p.shape != b.shape:
        raise UsageError("payments must match the bid matrix shape")
    totals = b.sum(axis=0)
    if np.any(totals <= 0.0):
        raise DegenerateColumnError("an item with no bids cannot be raffled")
    rng = _rng(seed)
    n, m = b.shape
    winners = np.empty(m, dtype=int)
    charges = np.empty(m)
    for j in range(m):
        probs = b[:, j] / totals[j]
        winners[j] = rng.choice(n, p=probs)
        charges[j] = totals[j] / b[winners[j], j] * p[winners[j], j]
    return RandomizedOutcome(winners=winners, charges=charges, seed=seed)


@dataclass
class AgentConversionStats:
    agent: int
    mean_value: float
    mean_payment: float
    expected_value: float
    expected_payment: float
    sigma_value: float
    sigma_payment: float
    draws: int
    seed: int

    def passes(self, n_sigma: float = 4.0) -> bool:
        ok_v = abs(self.mean_value - self.expected_value) <= max(
            n_sigma * self.sigma_value, 1e-12)
        ok_p = abs(self.mean_payment - self.expected_payment) <= max(
            n_sigma * self.sigma_payment, 1e-12)
        return ok_v and ok_p


@dataclass
class ConversionReport:
    stats: list[AgentConversionStats]
    draws: int
    seed: int
    rng_algorithm: str = RNG_ALGORITHM

    def all_pass(self, n_sigma: float = 4.0) -> bool:
        return all(s.passes(n_sigma) for s in self.stats)

    def to_json(self) -> str:
        payload = {
            "rng_algorithm": self.rng_algorithm,
            "draws": self.draws,
            "seed": self.seed,
            "agents": [{
                "agent": s.agent,
                "mean_value": s.mean_value,
                "mean_payment": s.mean_payment,
                "expected_value": s.expected_value,
                "expected_payment": s.expected_payment,
                "sigma_value": s.sigma_value,
                "sigma_payment": s.sigma_payment,
                "draws": s.draws,
                "seed": s.seed,
            } for s in self.stats],
        }
        return json.dumps(payload, sort_keys=True)


def expectation_check(instance: Instance, bids, mech: MechanismSpec,
                      draws: int, seed: int) -> ConversionReport:
    """Monte Carlo check that the lottery matches the divisible outcome.

    Samples ``draws`` independent outcomes and compares each agent's mean
    value and mean payment with the divisible-side expectations.  The
    reported sigma is the standard error of the mean from the sample
    variance; deterministic items (a single positive bidder) have zero
    variance and must match exactly.
    """
    if draws < 1:
        raise UsageError("need at least one draw")
    for agent in instance.agents:
        if agent.valuation.kind != "linear":
            raise UsageError("the randomised conversion covers linear valuations")
    b = validate_bids(bids, n=instance.n, m=instance.m)
    totals = b.sum(axis=0)
    if np.any(totals <= 0.0):
        raise DegenerateColumnError("an item with no bids cannot be raffled")
    alloc, payments = mechanism_outcome(b, mech)
    coeffs = np.array([a.valuation.coeffs for a in instance.agents])
    expected_value = (alloc.shares * coeffs).sum(axis=1)
    expected_payment = payments.sum(axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        charge = np.where(b > 0.0, totals[None, :] / b * payments, 0.0)

    rng = _rng(seed)
    n, m = b.shape
    value_draws = np.zeros((draws, n))
    payment_draws = np.zeros((draws, n))
    rows = np.arange(draws)
    for j in range(m):
        probs = b[:, j] / totals[j]
        winners = rng.choice(n, size=draws, p=probs)
        value_draws[rows, winners] += coeffs[winners, j]
        payment_draws[rows, winners] += charge[winners, j]

    stats = []
    for i in range(n):
        sig_v = float(value_draws[:, i].std(ddof=1) / np.sqrt(draws)) if draws > 1 else float("inf")
        sig_p = float(payment_draws[:, i].std(ddof=1) / np.sqrt(draws)) if draws > 1 else float("inf")
        stats.append(AgentConversionStats(
            agent=i,
            mean_value=float(value_draws[:, i].mean()),
            mean_payment=float(payment_draws[:, i].mean()),
            expected_value=float(expected_value[i]),
            expected_payment=float(expected_payment[i]),
            sigma_value=sig_v,
            sigma_payment=sig_p,
            draws=draws,
            seed=seed))
    return ConversionReport(stats=stats, draws=draws, seed=seed)
