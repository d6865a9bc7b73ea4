"""Experiment orchestration: instance generation, batches, sweeps, search.

Every run is deterministic from the config's master seed.  Trial t derives
its own seed from ``(master_seed, t)`` through numpy's SeedSequence, so
results do not depend on execution order and a bounded worker pool can
process trials concurrently; rows are merged in trial order either way.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import EquilibriumResult, best_response_dynamics
from .errors import PropmechError, UsageError
from .model import (
    AgentSpec,
    Instance,
    ValuationSpec,
    instance_to_dict,
)
from .payments import MechanismSpec
from .solver import SolverParams
from .welfare import (
    AssignmentGrid,
    PoaReport,
    build_dual_power,
    build_dual_standard,
    check_dual_feasibility,
    fit_grid_step,
    poa_report,
)

SCHEMA_VERSION = 1

#: fixed CSV column order for exported results
EXPORT_COLUMNS = [
    "instance_id", "mechanism", "n", "m", "eps", "lw_eq", "opt", "dual_obj",
    "ratio", "certified_ratio", "converged", "rounds", "max_kkt_residual",
    "seed", "restart", "cert_feasible", "error",
]


@dataclass(frozen=True)
class GeneratorSpec:
    """Distributions from which random instances are drawn.

    ``n`` and ``m`` are inclusive [lo, hi] ranges; ``rho`` is one of
    {"type": "point", "value": r}, {"type": "choice", "values": [...]},
    or {"type": "uniform", "lo": a, "hi": b}.
    """

    n: tuple[int, int] = (2, 3)
    m: tuple[int, int] = (1, 2)
    kinds: tuple[str, ...] = ("linear",)
    v_range: tuple[float, float] = (0.1, 2.0)
    budget_range: tuple[float, float] = (0.3, 2.5)
    rho: dict = field(default_factory=lambda: {"type": "choice", "values": [0.0, 1.0]})
    q_range: tuple[float, float] = (0.4, 1.0)
    shift_range: tuple[float, float] = (0.5, 2.0)
    #: "independent" draws every v_ij fresh; "rank-one" draws an agent
    #: level from v_range times an item weight in [0.5, 1.5]
    value_structure: str = "independent"

    def __post_init__(self):
        if self.n[0] < 1 or self.n[0] > self.n[1]:
            raise UsageError("bad agent-count range")
        if self.m[0] < 1 or self.m[0] > self.m[1]:
            raise UsageError("bad item-count range")
        if not (0 < self.v_range[0] <= self.v_range[1]):
            raise UsageError("value range must be positive")
        if not (0 < self.budget_range[0] <= self.budget_range[1]):
            raise UsageError("budget range must be positive")

    def to_dict(self) -> dict:
        return {"n": list(self.n), "m": list(self.m), "kinds": list(self.kinds),
                "v_range": list(self.v_range),
                "budget_range": list(self.budget_range), "rho": dict(self.rho),
                "q_range": list(self.q_range),
                "shift_range": list(self.shift_range),
                "value_structure": self.value_structure}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        kw = {}
        for key in ("n", "m", "v_range", "budget_range", "q_range", "shift_range"):
            if key in d:
                kw[key] = tuple(d[key])
        if "kinds" in d:
            kw["kinds"] = tuple(d["kinds"])
        if "rho" in d:
            kw["rho"] = dict(d["rho"])
        if "value_structure" in d:
            kw["value_structure"] = d["value_structure"]
        return cls(**kw)


def _draw_rho(spec: dict, rng: np.random.Generator) -> float:
    kind = spec.get("type", "point")
    if kind == "point":
        return float(spec["value"])
    if kind == "choice":
        return float(rng.choice(spec["values"]))
    if kind == "uniform":
        return float(rng.uniform(spec.get("lo", 0.0), spec.get("hi", 1.0)))
    raise UsageError(f"unknown rho distribution {kind!r}")


def generate_instance(gen: GeneratorSpec, seed) -> Instance:
    """Draw an instance; identical (spec, seed) pairs give identical output."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = int(rng.integers(gen.n[0], gen.n[1] + 1))
    m = int(rng.integers(gen.m[0], gen.m[1] + 1))
    item_weights = (rng.uniform(0.5, 1.5, size=m)
                    if gen.value_structure == "rank-one" else None)
    agents = []
    for _ in range(n):
        kind = str(rng.choice(list(gen.kinds)))
        if item_weights is not None:
            coeffs = tuple(float(rng.uniform(*gen.v_range)) * item_weights)
        else:
            coeffs = tuple(rng.uniform(*gen.v_range, size=m))
        q = tuple(rng.uniform(*gen.q_range, size=m)) if kind == "power-sum" else None
        shift = float(rng.uniform(*gen.shift_range)) if kind == "log-sum" else None
        agents.append(AgentSpec(
            valuation=ValuationSpec(kind=kind, coeffs=coeffs, q=q, shift=shift),
            budget=float(rng.uniform(*gen.budget_range)),
            rho=_draw_rho(gen.rho, rng)))
    return Instance(agents=tuple(agents), item_count=m)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a batch needs; serialisable to the versioned JSON schema."""

    instances: GeneratorSpec = field(default_factory=GeneratorSpec)
    scheme: str = "standard"
    eps: float | None = None  # None means 1/(n-1), the strongest admissible
    bid_cap: float = 10.0
    schedule: str = "round-robin"
    init: str = "budget-split"
    nash_tol: float = 1e-6
    move_tol: float = 1e-8
    max_rounds: int = 200
    restarts: int = 1
    damping: float | None = None
    grid_step: float = 1.0 / 16.0
    enum_budget: int = 5_000_000
    solver: SolverParams = field(default_factory=SolverParams)
    trials: int = 10
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "instances": self.instances.to_dict(),
            "mechanism": {"scheme": self.scheme, "eps": self.eps,
                          "bid_cap": self.bid_cap},
            "equilibrium": {"schedule": self.schedule, "init": self.init,
                            "nash_tol": self.nash_tol, "move_tol": self.move_tol,
                            "max_rounds": self.max_rounds,
                            "restarts": self.restarts,
                            "damping": self.damping},
            "welfare": {"grid_step": self.grid_step,
                        "enum_budget": self.enum_budget},
            "solver": self.solver.to_dict(),
            "trials": self.trials,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise UsageError(f"unsupported config schema version {version}")
        mech = d.get("mechanism", {})
        eq = d.get("equilibrium", {})
        welfare = d.get("welfare", {})
        solver = d.get("solver", {})
        return cls(
            instances=GeneratorSpec.from_dict(d.get("instances", {})),
            scheme=mech.get("scheme", "standard"),
            eps=mech.get("eps"),
            bid_cap=mech.get("bid_cap", 10.0),
            schedule=eq.get("schedule", "round-robin"),
            init=eq.get("init", "budget-split"),
            nash_tol=eq.get("nash_tol", 1e-6),
            move_tol=eq.get("move_tol", 1e-8),
            max_rounds=eq.get("max_rounds", 200),
            restarts=eq.get("restarts", 1),
            damping=eq.get("damping"),
            grid_step=welfare.get("grid_step", 1.0 / 16.0),
            enum_budget=welfare.get("enum_budget", 5_000_000),
            solver=SolverParams(**solver) if solver else SolverParams(),
            trials=d.get("trials", 10),
            seed=d.get("seed", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class ResultsRow:
    """One (instance, mechanism, restart) outcome; the CSV row unit."""

    instance_id: str
    mechanism: str
    n: int
    m: int
    eps: float
    lw_eq: float
    opt: float
    dual_obj: float
    ratio: float
    certified_ratio: float
    converged: bool
    rounds: int
    max_kkt_residual: float
    seed: int
    restart: int
    cert_feasible: bool
    error: str = ""

    def to_list(self) -> list:
        return [getattr(self, col) for col in EXPORT_COLUMNS]


def mechanism_for(config: ExperimentConfig, n: int) -> MechanismSpec:
    eps = config.eps
    if config.scheme in ("power", "modified"):
        if n < 2:
            raise UsageError(f"the {config.scheme} scheme requires n >= 2")
        if eps is None:
            eps = 1.0 / (n - 1)
    return MechanismSpec(scheme=config.scheme, n_agents=n, eps=eps,
                         bid_cap=config.bid_cap if config.scheme == "modified" else None)


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1)[0])


def run_single(instance: Instance, mech: MechanismSpec, config: ExperimentConfig,
               init, seed: int) -> tuple[EquilibriumResult, PoaReport, bool]:
    """Dynamics, certificate, feasibility check, and ratios for one setup."""
    eq = best_response_dynamics(
        instance, mech, init=init, schedule=config.schedule,
        nash_tol=config.nash_tol, move_tol=config.move_tol,
        max_rounds=config.max_rounds, seed=seed, solver_params=config.solver,
        damping=config.damping)
    if mech.scheme == "standard":
        cert = build_dual_standard(instance, eq)
    else:
        cert = build_dual_power(instance, eq, mech)
    # per-agent feasibility grids are cheap at the configured step; the
    # joint optimal-welfare enumeration coarsens until it fits the budget
    agent_grid = AssignmentGrid(config.grid_step)
    feas = check_dual_feasibility(cert, instance, agent_grid, config.enum_budget)
    opt_grid = AssignmentGrid(fit_grid_step(instance.n, instance.m,
                                            config.enum_budget,
                                            config.grid_step))
    report = poa_report(instance, eq, cert, opt_grid, config.solver,
                        config.enum_budget)
    return eq, report, feas.feasible


def run_trial(config: ExperimentConfig, trial: int) -> list[ResultsRow]:
    """All restarts of one trial; failures come back as error rows."""
    seed = trial_seed(config.seed, trial)
    instance_id = f"t{trial:05d}"
    rows = []
    try:
        instance = generate_instance(config.instances, seed)
        mech = mechanism_for(config, instance.n)
    except PropmechError as exc:
        return [ResultsRow(
            instance_id=instance_id, mechanism=config.scheme, n=0, m=0,
            eps=float("nan"), lw_eq=float("nan"), opt=float("nan"),
            dual_obj=float("nan"), ratio=float("nan"),
            certified_ratio=float("nan"), converged=False, rounds=0,
            max_kkt_residual=float("nan"), seed=seed, restart=0,
            cert_feasible=False, error=str(exc))]
    for restart in range(max(1, config.restarts)):
        init = config.init if restart == 0 else "random"
        restart_seed = trial_seed(seed, restart)
        try:
            eq, report, cert_ok = run_single(instance, mech, config, init,
                                             restart_seed)
            rows.append(ResultsRow(
                instance_id=instance_id, mechanism=mech.scheme,
                n=instance.n, m=instance.m,
                eps=mech.eps if mech.eps is not None else float("nan"),
                lw_eq=report.lw_eq, opt=report.opt_concave
                if report.opt_concave >= report.opt_grid else report.opt_grid,
                dual_obj=report.dual_obj, ratio=report.ratio,
                certified_ratio=report.certified_ratio,
                converged=eq.converged, rounds=eq.rounds,
                max_kkt_residual=eq.max_kkt_residual, seed=seed,
                restart=restart, cert_feasible=cert_ok,
                error=eq.failure or ""))
        except PropmechError as exc:
            rows.append(ResultsRow(
                instance_id=instance_id, mechanism=mech.scheme,
                n=instance.n, m=instance.m,
                eps=mech.eps if mech.eps is not None else float("nan"),
                lw_eq=float("nan"), opt=float("nan"), dual_obj=float("nan"),
                ratio=float("nan"), certified_ratio=float("nan"),
                converged=False, rounds=0, max_kkt_residual=float("nan"),
                seed=seed, restart=restart, cert_feasible=False,
                error=str(exc)))
    return rows


def run_experiment(config: ExperimentConfig, workers: int = 1) -> list[ResultsRow]:
    """Run all trials; a failing trial yields error rows, never an abort."""
    trials = range(config.trials)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            nested = list(pool.map(run_trial, [config] * config.trials, trials))
    else:
        nested = [run_trial(config, t) for t in trials]
    return [row for rows in nested for row in rows]


@dataclass
class SweepRow:
    n: int
    eps: float
    bound: float
    trials: int
    converged: int
    max_ratio: float
    max_certified_ratio: float

    def to_list(self) -> list:
        return [self.n, self.eps, self.bound, self.trials, self.converged,
                self.max_ratio, self.max_certified_ratio]


SWEEP_COLUMNS = ["n", "eps", "bound", "trials", "converged", "max_ratio",
                 "max_certified_ratio"]


def poa_sweep_n(config: ExperimentConfig, n_values,
                workers: int = 1) -> tuple[list[SweepRow], list[ResultsRow]]:
    """Worst observed and certified ratios per agent count.

    Each n runs its own batch at eps = 1/(n-1) unless the config pins eps;
    the reported bound column is the 1 + eps envelope.
    """
    if config.scheme not in ("power", "modified"):
        raise UsageError("the sweep studies the power and modified schemes")
    sweep_rows = []
    all_rows = []
    for n in n_values:
        if n < 2:
            raise UsageError("the sweep needs n >= 2")
        eps = config.eps if config.eps is not None else 1.0 / (n - 1)
        sub = replace(config, instances=replace(config.instances, n=(n, n)),
                      eps=eps)
        rows = run_experiment(sub, workers=workers)
        all_rows.extend(rows)
        good = [r for r in rows if r.converged and not r.error]
        sweep_rows.append(SweepRow(
            n=n, eps=eps, bound=1.0 + eps, trials=len(rows),
            converged=len(good),
            max_ratio=max((r.ratio for r in good), default=float("nan")),
            max_certified_ratio=max((r.certified_ratio for r in good),
                                    default=float("nan"))))
    return sweep_rows, all_rows


# ---------------------------------------------------------------------------
# Adversarial lower-bound search (pay-your-bid scheme).
# ---------------------------------------------------------------------------

@dataclass
class SearchResult:
    instance: Instance
    ratio: float
    evaluations: int
    history: list[float]

    def to_dict(self) -> dict:
        return {"instance": instance_to_dict(self.instance),
                "ratio": self.ratio, "evaluations": self.evaluations,
                "history": self.history}


def _search_eval(instance: Instance, config: ExperimentConfig, seed: int) -> float:
    mech = mechanism_for(config, instance.n)
    try:
        eq, report, _ = run_single(instance, mech, config, config.init, seed)
    except PropmechError:
        return -math.inf
    if not eq.converged or not math.isfinite(report.ratio):
        return -math.inf
    return report.ratio


def _perturb(instance: Instance, rng: np.random.Generator,
             scale: float) -> Instance:
    agents = []
    for a in instance.agents:
        coeffs = tuple(float(c * math.exp(rng.normal(0.0, scale)))
                       for c in a.valuation.coeffs)
        val = ValuationSpec(kind=a.valuation.kind, coeffs=coeffs,
                            q=a.valuation.q, shift=a.valuation.shift)
        budget = float(a.budget * math.exp(rng.normal(0.0, scale)))
        agents.append(AgentSpec(valuation=val, budget=max(budget, 1e-3),
                                rho=a.rho))
    return Instance(agents=tuple(agents), item_count=instance.item_count)


def lower_bound_search(config: ExperimentConfig, budget: int,
                       seed: int = 0) -> SearchResult:
    """Randomised local search for high-ratio pay-your-bid instances.

    Hill climbing over log-space perturbations of values and budgets,
    restarting from the best point found.  Only converged equilibria count;
    a zero budget returns the seed instance's ratio unchanged.
    """
    if config.scheme != "standard":
        raise UsageError("the lower-bound search targets the pay-your-bid scheme")
    rng = np.random.default_rng(seed)
    current = generate_instance(config.instances, trial_seed(seed, 0))
    current_ratio = _search_eval(current, config, seed)
    best, best_ratio = current, current_ratio
    history = [best_ratio]
    evals = 1
    for step in range(budget):
        scale = 0.4 if step % 7 else 0.9
        candidate = _perturb(best, rng, scale)
        ratio = _search_eval(candidate, config, seed)
        evals += 1
        history.append(ratio)
        if ratio > best_ratio:
            best, best_ratio = candidate, ratio
    return SearchResult(instance=best, ratio=best_ratio, evaluations=evals,
                        history=history)


# ---------------------------------------------------------------------------
# Export / import / verify.
# ---------------------------------------------------------------------------

def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else (
            "inf" if value > 0 else ("-inf" if value < 0 else "nan"))
    return str(value)


def export_results_csv(rows: list[ResultsRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EXPORT_COLUMNS)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row.to_list()])


def export_results_json(rows: list[ResultsRow], path) -> None:
    payload = [{col: _format_cell(v) for col, v in zip(EXPORT_COLUMNS, row.to_list())}
               for row in rows]
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _parse_cell(col: str, text: str):
    if col in ("n", "m", "rounds", "seed", "restart"):
        return int(text)
    if col in ("converged", "cert_feasible"):
        return text == "true"
    if col in ("instance_id", "mechanism", "error"):
        return text
    return float(text)


def load_results_csv(path) -> list[ResultsRow]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EXPORT_COLUMNS:
            raise UsageError(f"unexpected results header in {path}")
        for rec in reader:
            rows.append(ResultsRow(**{col: _parse_cell(col, rec[col])
                                      for col in EXPORT_COLUMNS}))
    return rows


def load_results_json(path) -> list[ResultsRow]:
    with open(path) as fh:
        payload = json.load(fh)
    return [ResultsRow(**{col: _parse_cell(col, rec[col])
                          for col in EXPORT_COLUMNS}) for rec in payload]


@dataclass
class VerifyOutcome:
    instance_id: str
    restart: int
    matches: bool
    detail: str


def verify_results(rows: list[ResultsRow], config: ExperimentConfig,
                   tol: float = 1e-6) -> list[VerifyOutcome]:
    """Re-run each row from its recorded seed and compare the ratios."""
    outcomes = []
    by_trial: dict[str, int] = {}
    for row in rows:
        trial = int(row.instance_id.lstrip("t"))
        by_trial[row.instance_id] = trial
        fresh = run_trial(config, trial)
        match = None
        for cand in fresh:
            if cand.restart == row.restart:
                match = cand
        if match is None:
            outcomes.append(VerifyOutcome(row.instance_id, row.restart, False,
                                          "row not reproduced"))
            continue
        checks = []
        for attr in ("lw_eq", "ratio", "certified_ratio"):
            a, b = getattr(row, attr), getattr(match, attr)
            same = (a == b) or (math.isnan(a) and math.isnan(b)) or (
                math.isfinite(a) and math.isfinite(b)
                and abs(a - b) <= tol * max(1.0, abs(a)))
            if not same:
                checks.append(f"{attr}: {a!r} vs {b!r}")
        outcomes.append(VerifyOutcome(row.instance_id, row.restart,
                                      not checks, "; ".join(checks)))
    return outcomes
