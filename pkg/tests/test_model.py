import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from propmech import (
    AgentSpec,
    DomainError,
    Instance,
    UsageError,
    ValuationSpec,
    allocate_proportional,
    check_constraints,
    eval_gradient,
    eval_valuation,
    instance_from_json,
    instance_to_json,
    liquid_welfare,
)
from propmech.model import agent_values, validate_bids


def fd_gradient(val, d, h=1e-5):
    """Central finite differences, the independent oracle for gradients."""
    d = np.asarray(d, dtype=float)
    out = np.zeros_like(d)
    for j in range(d.size):
        up, dn = d.copy(), d.copy()
        up[j] = min(up[j] + h, 1.0)
        dn[j] = max(dn[j] - h, 0.0)
        out[j] = (eval_valuation(val, up) - eval_valuation(val, dn)) / (up[j] - dn[j])
    return out


def random_valuation(rng, m):
    kind = rng.choice(["linear", "power-sum", "log-sum"])
    coeffs = tuple(rng.uniform(0.1, 3.0, size=m))
    if kind == "power-sum":
        return ValuationSpec(kind, coeffs, q=tuple(rng.uniform(0.3, 1.0, size=m)))
    if kind == "log-sum":
        return ValuationSpec(kind, coeffs, shift=float(rng.uniform(0.2, 2.0)))
    return ValuationSpec(kind, coeffs)


class TestEvalValuation:
    def test_linear_direct(self):
        v = ValuationSpec("linear", (3.0, 1.0))
        assert eval_valuation(v, [0.5, 0.5]) == pytest.approx(2.0)

    def test_zero_everywhere(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            val = random_valuation(rng, 3)
            assert eval_valuation(val, np.zeros(3)) == 0.0

    def test_log_sum_direct(self):
        v = ValuationSpec("log-sum", (1.0,), shift=1.0)
        assert eval_valuation(v, [1.0]) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_monotone_in_each_coordinate(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            val = random_valuation(rng, 2)
            d = rng.uniform(0.0, 0.9, size=2)
            base = eval_valuation(val, d)
            for j in range(2):
                up = d.copy()
                up[j] += 0.05
                assert eval_valuation(val, up) >= base - 1e-12

    def test_out_of_range_rejected(self):
        v = ValuationSpec("linear", (1.0,))
        with pytest.raises(DomainError):
            eval_valuation(v, [1.5])
        with pytest.raises(DomainError):
            eval_valuation(v, [-0.2])


class TestEvalGradient:
    def test_linear_constant(self):
        v = ValuationSpec("linear", (3.0, 1.0))
        np.testing.assert_allclose(eval_gradient(v, [0.2, 0.9]), [3.0, 1.0])

    def test_power_sum_point(self):
        v = ValuationSpec("power-sum", (1.0,), q=(0.5,))
        assert eval_gradient(v, [0.25])[0] == pytest.approx(1.0, abs=1e-12)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            m = int(rng.integers(1, 4))
            val = random_valuation(rng, m)
            d = rng.uniform(0.05, 0.95, size=m)
            g = eval_gradient(val, d)
            fd = fd_gradient(val, d)
            np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)

    def test_infinite_slope_at_zero_for_fractional_exponent(self):
        v = ValuationSpec("power-sum", (1.0,), q=(0.5,))
        assert np.isposinf(eval_gradient(v, [0.0])[0])


class TestAllocateProportional:
    def test_symmetric_column(self):
        alloc = allocate_proportional(np.ones((4, 1)))
        np.testing.assert_allclose(alloc.shares[:, 0], 0.25)
        assert not alloc.degenerate[0]

    def test_direct_formula(self):
        alloc = allocate_proportional(np.array([[2.0], [6.0]]))
        np.testing.assert_allclose(alloc.shares[:, 0], [0.25, 0.75])

    def test_degenerate_column_flagged_equal_split(self):
        alloc = allocate_proportional(np.zeros((2, 1)))
        np.testing.assert_allclose(alloc.shares[:, 0], [0.5, 0.5])
        assert alloc.degenerate[0]

    @given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=5),
           st.floats(1e-3, 1e3))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariance(self, column, c):
        bids = np.array(column)[:, None]
        base = allocate_proportional(bids).shares
        scaled = allocate_proportional(c * bids).shares
        assert np.max(np.abs(base - scaled)) <= 1e-12

    @given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 10_000))
    @settings(max_examples=80, deadline=None)
    def test_columns_sum_to_one(self, n, m, seed):
        rng = np.random.default_rng(seed)
        bids = rng.uniform(0.0, 2.0, size=(n, m))
        bids[rng.uniform(size=(n, m)) < 0.2] = 0.0
        alloc = allocate_proportional(bids)
        np.testing.assert_allclose(alloc.shares.sum(axis=0), 1.0, atol=1e-12)

    def test_monotone_in_own_bid(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            bids = rng.uniform(0.1, 2.0, size=(3, 2))
            base = allocate_proportional(bids).shares
            bumped = bids.copy()
            bumped[1, 0] += 0.3
            after = allocate_proportional(bumped).shares
            assert after[1, 0] > base[1, 0]
            assert after[0, 0] <= base[0, 0] + 1e-15
            assert after[2, 0] <= base[2, 0] + 1e-15

    def test_rejects_negative_bids(self):
        with pytest.raises(DomainError):
            validate_bids(np.array([[-0.1, 1.0]]))


class TestCheckConstraints:
    def test_feasible_case(self):
        agent = AgentSpec(ValuationSpec("linear", (1.0, 1.0)), budget=1.0, rho=1.0)
        rep = check_constraints(agent, [0.3, 0.3], value=0.7)
        assert rep.budget_slack == pytest.approx(0.4)
        assert rep.ros_slack == pytest.approx(0.1)
        assert rep.feasible

    def test_budget_violation(self):
        agent = AgentSpec(ValuationSpec("linear", (1.0,)), budget=0.5, rho=1.0)
        rep = check_constraints(agent, [0.6], value=1.0)
        assert rep.budget_slack == pytest.approx(-0.1)
        assert not rep.feasible

    def test_zero_payments(self):
        agent = AgentSpec(ValuationSpec("linear", (1.0,)), budget=2.0, rho=0.0)
        rep = check_constraints(agent, [0.0], value=0.0)
        assert rep.budget_slack == pytest.approx(2.0)
        assert rep.ros_slack == 0.0
        assert rep.feasible


class TestLiquidWelfare:
    def instance(self):
        return Instance((
            AgentSpec(ValuationSpec("linear", (3.0,)), budget=1.0, rho=1.0),
            AgentSpec(ValuationSpec("linear", (1.0,)), budget=2.0, rho=1.0),
        ), 1)

    def test_capped_sum(self):
        inst = self.instance()
        alloc = allocate_proportional(np.array([[1.0], [1.0]]))
        assert liquid_welfare(inst, alloc) == pytest.approx(1.5)

    def test_corner_allocation(self):
        inst = self.instance()
        alloc = allocate_proportional(np.array([[1.0], [0.0]]))
        assert liquid_welfare(inst, alloc) == pytest.approx(1.0)

    def test_bounded_by_total_budget(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            n, m = 3, 2
            agents = tuple(
                AgentSpec(random_valuation(rng, m), budget=float(rng.uniform(0.2, 2)),
                          rho=float(rng.uniform(0, 1))) for _ in range(n))
            inst = Instance(agents, m)
            alloc = allocate_proportional(rng.uniform(0, 1, size=(n, m)) + 1e-3)
            assert liquid_welfare(inst, alloc) <= sum(a.budget for a in agents) + 1e-12

    def test_agent_value_monotone_in_own_share(self):
        rng = np.random.default_rng(6)
        inst = self.instance()
        for _ in range(20):
            a = rng.uniform(0.0, 0.5)
            lo = allocate_proportional(np.array([[a], [1.0 - a]]))
            hi = allocate_proportional(np.array([[a + 0.2], [0.8 - a]]))
            assert agent_values(inst, hi)[0] >= agent_values(inst, lo)[0]


class TestSerialization:
    def test_round_trip_all_kinds(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            m = int(rng.integers(1, 4))
            agents = tuple(
                AgentSpec(random_valuation(rng, m),
                          budget=float(rng.uniform(0.1, 5.0)),
                          rho=float(rng.uniform(0.0, 1.0)))
                for _ in range(int(rng.integers(1, 4))))
            inst = Instance(agents, m)
            back = instance_from_json(instance_to_json(inst))
            assert back == inst

    def test_field_names_fixed(self):
        inst = Instance((AgentSpec(ValuationSpec("power-sum", (1.0,), q=(0.5,)),
                                   budget=1.0, rho=0.5),), 1)
        doc = json.loads(instance_to_json(inst))
        assert set(doc) == {"agents", "items"}
        assert set(doc["agents"][0]) == {"kind", "coeffs", "q", "budget", "rho"}


class TestValidation:
    def test_power_sum_requires_exponents(self):
        with pytest.raises(UsageError):
            ValuationSpec("power-sum", (1.0,))

    def test_exponent_range(self):
        with pytest.raises(DomainError):
            ValuationSpec("power-sum", (1.0,), q=(1.5,))

    def test_log_sum_requires_shift(self):
        with pytest.raises(DomainError):
            ValuationSpec("log-sum", (1.0,))

    def test_rho_range(self):
        with pytest.raises(DomainError):
            AgentSpec(ValuationSpec("linear", (1.0,)), budget=1.0, rho=1.2)

    def test_budget_positive(self):
        with pytest.raises(DomainError):
            AgentSpec(ValuationSpec("linear", (1.0,)), budget=0.0, rho=0.5)

    def test_valuation_length_must_match_items(self):
        with pytest.raises(UsageError):
            Instance((AgentSpec(ValuationSpec("linear", (1.0,)), 1.0, 0.5),), 2)
