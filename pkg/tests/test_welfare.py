import numpy as np
import pytest

from propmech import (
    AgentSpec,
    AssignmentGrid,
    DualCertificate,
    EnumerationBudgetError,
    Instance,
    MechanismSpec,
    PreconditionError,
    UnsupportedConstructionError,
    UsageError,
    ValuationSpec,
    best_response_dynamics,
    build_dual_power,
    build_dual_standard,
    check_dual_feasibility,
    check_dual_feasibility_joint,
    optimal_lw_concave,
    optimal_lw_grid,
    poa_report,
)
from propmech.welfare import fit_grid_step


def two_agent_instance(budget2=10.0):
    return Instance((
        AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0),
        AgentSpec(ValuationSpec("linear", (2.0,)), budget2, 1.0)), 1)


class TestOptimalWelfare:
    def test_dominant_agent(self):
        opt = optimal_lw_grid(two_agent_instance(), AssignmentGrid(1 / 8))
        assert opt.value == pytest.approx(2.0)
        np.testing.assert_allclose(opt.shares[:, 0], [0.0, 1.0])

    def test_budget_cap_splits_item(self):
        inst = two_agent_instance(budget2=0.5)
        opt = optimal_lw_grid(inst, AssignmentGrid(1 / 64))
        assert opt.value == pytest.approx(1.25)
        np.testing.assert_allclose(opt.shares[:, 0], [0.75, 0.25])
        conc = optimal_lw_concave(inst)
        assert conc.value == pytest.approx(1.25, abs=1e-3)
        assert conc.value >= opt.value - 1e-3

    def test_zero_valuations(self):
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (0.0,)), 1.0, 1.0)
            for _ in range(2)), 1)
        assert optimal_lw_grid(inst, AssignmentGrid(0.5)).value == 0.0
        assert optimal_lw_concave(inst).value == 0.0

    def test_single_agent_takes_everything(self):
        inst = Instance((AgentSpec(ValuationSpec("linear", (2.0, 1.0)), 10.0, 1.0),), 2)
        opt = optimal_lw_grid(inst, AssignmentGrid(0.25))
        assert opt.value == pytest.approx(3.0)

    def test_unit_step_picks_per_item_winners(self):
        inst = Instance((
            AgentSpec(ValuationSpec("linear", (3.0, 0.5)), 10.0, 1.0),
            AgentSpec(ValuationSpec("linear", (1.0, 2.0)), 10.0, 1.0)), 2)
        opt = optimal_lw_grid(inst, AssignmentGrid(1.0))
        assert opt.value == pytest.approx(5.0)

    def test_enumeration_budget_guard(self):
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (1.0,) * 3), 1.0, 1.0)
            for _ in range(4)), 3)
        with pytest.raises(EnumerationBudgetError):
            optimal_lw_grid(inst, AssignmentGrid(1 / 16), enum_budget=1000)

    def test_concave_at_least_grid_minus_step(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            n, m = int(rng.integers(2, 4)), int(rng.integers(1, 3))
            inst = Instance(tuple(
                AgentSpec(ValuationSpec("linear", tuple(rng.uniform(0.2, 2, m))),
                          budget=float(rng.uniform(0.2, 1.5)),
                          rho=1.0) for _ in range(n)), m)
            grid_val = optimal_lw_grid(inst, AssignmentGrid(1 / 8)).value
            conc_val = optimal_lw_concave(inst).value
            assert conc_val >= grid_val - 0.5 * (1 / 8)

    def test_fit_grid_step(self):
        assert fit_grid_step(2, 1, 10_000) == pytest.approx(1 / 16)
        assert fit_grid_step(6, 3, 5_000_000) > 1 / 16
        assert fit_grid_step(6, 3, 10) == 1.0


class TestDualStandard:
    def kelly_eq(self):
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0)
            for _ in range(2)), 1)
        eq = best_response_dynamics(inst, MechanismSpec("standard", 2),
                                    nash_tol=1e-8, move_tol=1e-10)
        return inst, eq

    def test_symmetric_kelly_certificate(self):
        inst, eq = self.kelly_eq()
        cert = build_dual_standard(inst, eq)
        assert cert.alpha[0] == pytest.approx(0.5, abs=1e-6)
        np.testing.assert_allclose(cert.beta, 0.75, atol=1e-6)
        assert cert.objective == pytest.approx(2.0, abs=1e-5)
        assert cert.tag == "standard-PM"

    def test_capped_agent_contributes_budget(self):
        inst = Instance((
            AgentSpec(ValuationSpec("linear", (5.0,)), 0.5, 1.0),
            AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0)), 1)
        eq = best_response_dynamics(inst, MechanismSpec("standard", 2))
        assert eq.converged
        cert = build_dual_standard(inst, eq)
        i_capped = 0
        assert cert.beta[i_capped] == pytest.approx(0.5)

    def test_valuation_maximiser_contributes_capped_value(self):
        inst = Instance((
            AgentSpec(ValuationSpec("linear", (2.0,)), 10.0, 0.0),
            AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0)), 1)
        eq = best_response_dynamics(inst, MechanismSpec("standard", 2))
        assert eq.converged
        cert = build_dual_standard(inst, eq)
        d0 = eq.allocation.shares[0, 0]
        assert cert.beta[0] == pytest.approx(min(10.0, 2.0 * d0), abs=1e-9)

    def test_hybrid_rho_rejected(self):
        inst = Instance((AgentSpec(ValuationSpec("linear", (1.0,)), 1.0, 0.4),
                         AgentSpec(ValuationSpec("linear", (1.0,)), 1.0, 1.0)), 1)
        eq = best_response_dynamics(inst, MechanismSpec("standard", 2), max_rounds=5)
        with pytest.raises(UnsupportedConstructionError):
            build_dual_standard(inst, eq)

    def test_per_agent_bound_at_equilibria(self):
        # at every converged pay-your-bid equilibrium, each agent's bid total
        # plus its offset stays within twice its capped value
        rng = np.random.default_rng(1)
        checked = 0
        for seed in range(15):
            n = int(rng.integers(2, 4))
            inst = Instance(tuple(
                AgentSpec(ValuationSpec("linear", (float(rng.uniform(0.3, 2)),)),
                          budget=float(rng.uniform(0.3, 2)),
                          rho=float(rng.choice([0.0, 1.0]))) for _ in range(n)), 1)
            eq = best_response_dynamics(inst, MechanismSpec("standard", n), seed=seed)
            if not eq.converged:
                continue
            checked += 1
            cert = build_dual_standard(inst, eq)
            for i, agent in enumerate(inst.agents):
                from propmech.model import eval_valuation
                value = eval_valuation(agent.valuation, eq.allocation.shares[i])
                lhs = eq.bids[i].sum() + cert.beta[i]
                assert lhs <= 2.0 * min(agent.budget, value) + 1e-8
        assert checked >= 8


class TestDualPower:
    def test_linear_uncapped_offsets_vanish(self):
        mech = MechanismSpec("power", 2, eps=1.0)
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0)
            for _ in range(2)), 1)
        eq = best_response_dynamics(inst, mech, max_rounds=10)
        cert = build_dual_power(inst, eq, mech)
        np.testing.assert_allclose(cert.beta, 0.0, atol=1e-12)

    def test_power_sum_offset_hand_value(self):
        # value d^0.5 at d = 1/4 gives offset 0.5 - 0.25 * 1 = 0.25
        mech = MechanismSpec("power", 2, eps=1.0)
        inst = Instance((
            AgentSpec(ValuationSpec("power-sum", (1.0,), q=(0.5,)), 10.0, 1.0),
            AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0)), 1)
        bids = np.array([[1.0], [3.0]])  # shares 1/4, 3/4
        from propmech.payments import mechanism_outcome
        alloc, pay = mechanism_outcome(bids, mech)
        from propmech.dynamics import EquilibriumResult
        eq = EquilibriumResult(bids=bids, allocation=alloc, payments=pay,
                               kkt_reports=[None, None], rounds=0, max_move=0.0,
                               converged=False, improvements=np.zeros(2))
        cert = build_dual_power(inst, eq, mech)
        assert cert.beta[0] == pytest.approx(0.25, abs=1e-12)

    def test_capped_agents_contribute_budgets(self):
        mech = MechanismSpec("power", 2, eps=1.0)
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (2.0,)), 0.135, 0.9)
            for _ in range(2)), 1)
        eq = best_response_dynamics(inst, mech, init="tight", max_rounds=40)
        assert eq.converged
        cert = build_dual_power(inst, eq, mech)
        totals = eq.bids.sum(axis=0)
        np.testing.assert_allclose(cert.alpha, totals**2, atol=1e-12)
        np.testing.assert_allclose(cert.beta, 0.135)
        assert cert.objective == pytest.approx(0.27 + totals[0] ** 2, abs=1e-9)

    def test_zero_total_rejected(self):
        mech = MechanismSpec("power", 2, eps=1.0)
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (1.0,)), 1.0, 1.0)
            for _ in range(2)), 1)
        from propmech.payments import mechanism_outcome
        from propmech.dynamics import EquilibriumResult
        bids = np.zeros((2, 1))
        alloc, pay = mechanism_outcome(bids, mech)
        eq = EquilibriumResult(bids=bids, allocation=alloc, payments=pay,
                               kkt_reports=[None, None], rounds=0, max_move=0.0,
                               converged=False, improvements=np.zeros(2))
        with pytest.raises(PreconditionError):
            build_dual_power(inst, eq, mech)


class TestFeasibility:
    def test_converged_certificates_feasible(self):
        rng = np.random.default_rng(2)
        grid = AssignmentGrid(1 / 16)
        checked = 0
        for seed in range(12):
            n, m = int(rng.integers(2, 4)), int(rng.integers(1, 3))
            inst = Instance(tuple(
                AgentSpec(ValuationSpec("linear", tuple(rng.uniform(0.3, 2, m))),
                          budget=float(rng.uniform(0.3, 2)),
                          rho=float(rng.choice([0.0, 1.0]))) for _ in range(n)), m)
            eq = best_response_dynamics(inst, MechanismSpec("standard", n), seed=seed)
            if not eq.converged:
                continue
            checked += 1
            cert = build_dual_standard(inst, eq)
            rep = check_dual_feasibility(cert, inst, grid)
            assert rep.feasible, f"seed {seed}: slack {rep.min_slack}"
        assert checked >= 7

    def test_zero_certificate_on_zero_instance(self):
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (0.0,)), 1.0, 1.0)
            for _ in range(2)), 1)
        cert = DualCertificate(alpha=np.zeros(1), beta=np.zeros(2), tag="standard-PM")
        rep = check_dual_feasibility(cert, inst, AssignmentGrid(0.25))
        assert rep.min_slack == pytest.approx(0.0, abs=1e-12)
        assert rep.feasible

    def test_corrupted_certificate_detected(self):
        inst = two_agent_instance(budget2=0.5)
        eq = best_response_dynamics(inst, MechanismSpec("standard", 2))
        cert = build_dual_standard(inst, eq)
        bad = DualCertificate(alpha=cert.alpha, beta=cert.beta - 1.0, tag=cert.tag)
        rep = check_dual_feasibility(bad, inst, AssignmentGrid(1 / 16))
        assert not rep.feasible
        assert rep.worst_assignment

    def test_joint_check_agrees_at_tiny_sizes(self):
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0)
            for _ in range(2)), 1)
        eq = best_response_dynamics(inst, MechanismSpec("standard", 2))
        cert = build_dual_standard(inst, eq)
        grid = AssignmentGrid(0.25)
        per_agent = check_dual_feasibility(cert, inst, grid)
        joint = check_dual_feasibility_joint(cert, inst, grid)
        assert per_agent.feasible and joint.feasible
        # the per-agent reduction is the stronger check
        assert joint.min_slack >= per_agent.min_slack - 1e-12

    def test_weak_duality(self):
        rng = np.random.default_rng(3)
        grid = AssignmentGrid(1 / 8)
        for seed in range(8):
            n = int(rng.integers(2, 4))
            inst = Instance(tuple(
                AgentSpec(ValuationSpec("linear", (float(rng.uniform(0.3, 2)),)),
                          budget=float(rng.uniform(0.3, 2)),
                          rho=float(rng.choice([0.0, 1.0]))) for _ in range(n)), 1)
            eq = best_response_dynamics(inst, MechanismSpec("standard", n), seed=seed)
            if not eq.converged:
                continue
            cert = build_dual_standard(inst, eq)
            if check_dual_feasibility(cert, inst, grid).feasible:
                opt = optimal_lw_grid(inst, grid).value
                assert cert.objective >= opt - 1e-8


class TestPoaReport:
    def test_symmetric_instance_fully_efficient(self):
        inst = Instance(tuple(
            AgentSpec(ValuationSpec("linear", (1.0,)), 10.0, 1.0)
            for _ in range(2)), 1)
        eq = best_response_dynamics(inst, MechanismSpec("standard", 2))
        cert = build_dual_standard(inst, eq)
        rep = poa_report(inst, eq, cert, AssignmentGrid(1 / 16))
        assert rep.ratio == pytest.approx(1.0, abs=1e-9)
        assert rep.certified_ratio == pytest.approx(2.0, abs=1e-6)
        assert not rep.zero_welfare

    def test_ratio_at_most_certified_for_feasible_certs(self):
        rng = np.random.default_rng(4)
        grid = AssignmentGrid(1 / 16)
        for seed in range(10):
            n = int(rng.integers(2, 4))
            inst = Instance(tuple(
                AgentSpec(ValuationSpec("linear", (float(rng.uniform(0.3, 2)),)),
                          budget=float(rng.uniform(0.3, 2)),
                          rho=float(rng.choice([0.0, 1.0]))) for _ in range(n)), 1)
            eq = best_response_dynamics(inst, MechanismSpec("standard", n), seed=seed)
            if not eq.converged:
                continue
            cert = build_dual_standard(inst, eq)
            if not check_dual_feasibility(cert, inst, grid).feasible:
                continue
            rep = poa_report(inst, eq, cert, grid)
            assert rep.ratio <= rep.certified_ratio + 1e-6
            assert rep.ratio >= 1.0 - 1e-9

    def test_zero_welfare_flagged_infinite(self):
        inst = Instance((
            AgentSpec(ValuationSpec("linear", (0.0,)), 1.0, 1.0),
            AgentSpec(ValuationSpec("linear", (1.0,)), 1.0, 1.0)), 1)
        from propmech.payments import mechanism_outcome
        from propmech.dynamics import EquilibriumResult
        bids = np.array([[1.0], [0.0]])  # worthless agent holds the item
        mech = MechanismSpec("standard", 2)
        alloc, pay = mechanism_outcome(bids, mech)
        eq = EquilibriumResult(bids=bids, allocation=alloc, payments=pay,
                               kkt_reports=[None, None], rounds=0, max_move=0.0,
                               converged=False, improvements=np.zeros(2))
        cert = build_dual_standard(inst, eq)
        rep = poa_report(inst, eq, cert, AssignmentGrid(0.5))
        assert rep.zero_welfare
        assert np.isinf(rep.ratio)


class TestAssignmentGrid:
    def test_step_must_divide_one(self):
        with pytest.raises(UsageError):
            AssignmentGrid(0.3)

    def test_fractions(self):
        np.testing.assert_allclose(AssignmentGrid(0.25).fractions(),
                                   [0.0, 0.25, 0.5, 0.75, 1.0])
