"""Command-line harness for batch studies.

Subcommands:

    run      experiment batch from a JSON config; writes CSV (+ figures)
    sweep    worst-case ratios across a range of agent counts
    search   randomised search for high price-of-anarchy instances
    verify   re-run a results file from its seeds and compare
    convert  randomised-conversion demo with an expectation report

Outputs are deterministic for a fixed config and seed (figures excluded;
the CSV is the contract).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .conversion import expectation_check
from .dynamics import best_response_dynamics
from .experiments import (
    SWEEP_COLUMNS,
    ExperimentConfig,
    export_results_csv,
    export_results_json,
    generate_instance,
    load_results_csv,
    load_results_json,
    lower_bound_search,
    mechanism_for,
    poa_sweep_n,
    run_experiment,
    trial_seed,
    verify_results,
)
from .model import instance_to_dict


def _load_config(args) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "eps", None) is not None:
        config = replace(config, eps=args.eps)
    if getattr(args, "grid_step", None) is not None:
        config = replace(config, grid_step=args.grid_step)
    if getattr(args, "trials", None) is not None:
        config = replace(config, trials=args.trials)
    return config


def _write_rows(rows, out: Path, fmt: str) -> Path:
    out.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out.with_suffix(".json")
        export_results_json(rows, path)
    else:
        path = out.with_suffix(".csv")
        export_results_csv(rows, path)
    return path


def _cmd_run(args) -> int:
    config = _load_config(args)
    rows = run_experiment(config, workers=args.workers)
    out = Path(args.out)
    path = _write_rows(rows, out, args.format)
    print(f"wrote {len(rows)} rows to {path}")
    if not args.no_plots:
        from .plotting import save_run_figure
        bound = None
        if config.scheme in ("power", "modified") and config.eps is not None:
            bound = 1.0 + config.eps
        elif config.scheme == "standard":
            bound = 2.0
        fig_path = out.with_suffix(".png")
        save_run_figure(rows, fig_path, bound=bound)
        print(f"wrote figure to {fig_path}")
    bad = [r for r in rows if r.error]
    if bad:
        print(f"{len(bad)} rows recorded failures (see the error column)")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    n_values = [int(x) for x in args.n_values.split(",") if x]
    sweep_rows, all_rows = poa_sweep_n(config, n_values, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    import csv as _csv
    sweep_path = out.with_suffix(".csv")
    with open(sweep_path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in sweep_rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row.to_list()])
    rows_path = _write_rows(all_rows, out.with_name(out.stem + "_rows"),
                            args.format)
    print(f"wrote sweep table to {sweep_path} and rows to {rows_path}")
    for row in sweep_rows:
        print(f"  n={row.n}: bound={row.bound:.4f} "
              f"max_certified={row.max_certified_ratio:.4f} "
              f"max_ratio={row.max_ratio:.4f} "
              f"({row.converged}/{row.trials} converged)")
    if not args.no_plots:
        from .plotting import save_sweep_figure
        fig_path = out.with_suffix(".png")
        save_sweep_figure(sweep_rows, fig_path)
        print(f"wrote figure to {fig_path}")
    return 0


def _cmd_search(args) -> int:
    config = _load_config(args)
    result = lower_bound_search(config, budget=args.budget,
                                seed=config.seed)
    out = Path(args.out).with_suffix(".json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    print(f"best ratio {result.ratio:.6f} after {result.evaluations} "
          f"evaluations; instance written to {out}")
    return 0


def _cmd_verify(args) -> int:
    config = _load_config(args)
    path = Path(args.results)
    rows = (load_results_json(path) if path.suffix == ".json"
            else load_results_csv(path))
    outcomes = verify_results(rows, config)
    bad = [o for o in outcomes if not o.matches]
    for o in outcomes:
        status = "ok" if o.matches else f"MISMATCH ({o.detail})"
        print(f"{o.instance_id} restart {o.restart}: {status}")
    print(f"{len(outcomes) - len(bad)}/{len(outcomes)} rows verified")
    return 1 if bad else 0


def _cmd_convert(args) -> int:
    config = _load_config(args)
    if config.scheme not in ("standard", "power"):
        print("conversion demo supports the standard and power schemes",
              file=sys.stderr)
        return 2
    seed = trial_seed(config.seed, 0)
    instance = generate_instance(config.instances, seed)
    mech = mechanism_for(config, instance.n)
    eq = best_response_dynamics(
        instance, mech, init=config.init, schedule=config.schedule,
        nash_tol=config.nash_tol, move_tol=config.move_tol,
        max_rounds=config.max_rounds, seed=seed, solver_params=config.solver)
    report = expectation_check(instance, eq.bids, mech, draws=args.draws,
                               seed=config.seed)
    out = Path(args.out).with_suffix(".json")
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = json.loads(report.to_json())
    payload["instance"] = instance_to_dict(instance)
    payload["converged"] = eq.converged
    out.write_text(json.dumps(payload, indent=2, sort_keys=True))
    status = "pass" if report.all_pass() else "FAIL"
    print(f"expectation check {status} at 4 sigma over {args.draws} draws; "
          f"report written to {out}")
    return 0 if report.all_pass() else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="propmech",
        description="Proportional-auction equilibrium and efficiency studies")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
        p.add_argument("--out", default=out_default,
                       help="output path stem (extension added per format)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--workers", type=int, default=1,
                       help="trial worker processes")
        p.add_argument("--grid-step", type=float, default=None, dest="grid_step",
                       help="override the welfare grid step")
        p.add_argument("--eps", type=float, default=None,
                       help="override the mechanism eps")
        p.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")

    p_run = sub.add_parser("run", help="run an experiment batch")
    common(p_run, "results")
    p_run.add_argument("--trials", type=int, default=None,
                       help="override the config's trial count")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="worst ratios across agent counts")
    common(p_sweep, "sweep")
    p_sweep.add_argument("--n-values", default="2,3,4,5", dest="n_values",
                         help="comma-separated agent counts")
    p_sweep.add_argument("--trials", type=int, default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_search = sub.add_parser("search", help="search for high-ratio instances")
    common(p_search, "search")
    p_search.add_argument("--budget", type=int, default=200,
                          help="number of candidate evaluations")
    p_search.set_defaults(func=_cmd_search)

    p_verify = sub.add_parser("verify", help="re-check a results file")
    common(p_verify, "verify")
    p_verify.add_argument("--results", required=True,
                          help="CSV or JSON results file to re-check")
    p_verify.set_defaults(func=_cmd_verify)

    p_convert = sub.add_parser("convert",
                               help="randomised-conversion expectation demo")
    common(p_convert, "conversion")
    p_convert.add_argument("--draws", type=int, default=100_000)
    p_convert.set_defaults(func=_cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
