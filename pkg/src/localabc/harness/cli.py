"""Command-line entry point: ``localabc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..core import load_table, save_table
from ..inference import (
    DEFAULT_COMPONENT_GRID,
    GlobalInitialTransformations,
    OptimizationConfig,
    TransformationParams,
    alpha_grid,
    candidate_grid,
    local_projection,
    local_projection_optimized,
    make_global_transformation,
)
from ..summaries import fit_preprocessor
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .experiment import ExperimentReport, run_experiment
from .models import simulate_tables, simulate_test_datasets
from .report import emit_plot_data

log = logging.getLogger("localabc")


class _Parser(argparse.ArgumentParser):
    # one-line diagnostic and exit code 2 on usage errors
    def error(self, message):
        self.exit(2, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, out_help: str) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default: 1 or the config value)")
    p.add_argument("--threads", type=int, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--out", required=True, help=out_help)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="localabc", description="Rejection ABC with local projection summaries.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate and save a reference table")
    _common(p, "table file (.csv, or .lfit for binary)")
    p.add_argument("--model", choices=("ricker", "gk", "toy"), required=True)
    p.add_argument("--n", type=int, required=True, help="number of simulations")
    p.add_argument("--quantiles", type=int, default=200, help="g-and-k: number of quantile summaries")
    p.add_argument("--n-obs", type=int, default=10000, help="g-and-k: observations per dataset")

    p = sub.add_parser("test-data", help="simulate test datasets with known parameters")
    _common(p, "table file for the test datasets")
    p.add_argument("--model", choices=("ricker", "gk", "toy"), required=True)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--quantiles", type=int, default=200)
    p.add_argument("--n-obs", type=int, default=10000)

    p = sub.add_parser("run", help="run an experiment from a config file")
    _common(p, "output directory")
    p.add_argument("--config", required=True)
    p.add_argument("--timings", action="store_true", help="also write per-row wall times to timings.csv")

    p = sub.add_parser("plot-data", help="aggregate a report into plot-ready CSV files")
    _common(p, "output directory")
    p.add_argument("--report", required=True, help="report.csv written by 'run'")

    p = sub.add_parser("transform", help="fit one transformation and write it as JSON")
    _common(p, "JSON bundle path")
    p.add_argument("--table", required=True, help="reference table with raw summaries")
    p.add_argument("--method", choices=("identity", "regression", "pls"), default="regression")
    p.add_argument("--components", type=int, default=None, help="PLS components (default: cross-validated)")
    p.add_argument("--alpha", type=float, default=1.0, help="neighbourhood fraction for a local fit")
    p.add_argument("--optimize", action="store_true", help="choose alpha (and components) by validation search")
    p.add_argument("--observed", default=None, help="table file whose row --row is the observed data")
    p.add_argument("--row", type=int, default=0)
    p.add_argument("--diagnostics", default=None, help="CSV path for the validation search scores")
    return parser


def _cfg_for(args) -> ExperimentConfig:
    return ExperimentConfig(
        model=args.model,
        seed=1 if args.seed is None else args.seed,
        n_sims=getattr(args, "n", 1),
        n_test=getattr(args, "n_test", 1),
        n_quantiles=args.quantiles,
        n_obs=args.n_obs,
    )


def _cmd_simulate(args) -> None:
    cfg = _cfg_for(args)
    (table,) = simulate_tables(cfg, args.n).values()
    save_table(table, args.out)
    log.info("wrote %d x (%d, %d) table to %s", table.n_sims, table.n_params, table.n_summaries, args.out)


def _cmd_test_data(args) -> None:
    cfg = _cfg_for(args)
    (table,) = simulate_test_datasets(cfg).values()
    save_table(table, args.out)


def _cmd_run(args) -> None:
    overrides = {"seed": args.seed}
    cfg = load_config(args.config, **overrides)
    report = run_experiment(cfg, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    save_config(cfg, out / "config.cfg")
    if args.timings:
        report.timings_to_csv(out / "timings.csv")
    n_failed = sum(r.status != "ok" for r in report.rows)
    log.info("%d rows written to %s (%d failed)", len(report.rows), out / "report.csv", n_failed)


def _cmd_plot_data(args) -> None:
    path = Path(args.report)
    if not path.is_file():
        raise FileNotFoundError(f"report not found: {path}")
    emit_plot_data(ExperimentReport.from_csv(path), args.out)


def _cmd_transform(args) -> None:
    raw = load_table(args.table)
    prep = fit_preprocessor(raw)
    table = prep.apply_table(raw)
    local = args.optimize or args.alpha < 1
    s_obs = None
    if args.observed is not None:
        obs = load_table(args.observed)
        if not 0 <= args.row < obs.n_sims:
            raise ValueError(f"--row {args.row} out of range for {obs.n_sims} observed rows")
        s_obs = prep.transform(obs.summaries[args.row])
    elif local:
        raise ValueError("a local fit needs --observed")
    rng_seed = 0 if args.seed is None else args.seed
    global_t = make_global_transformation(args.method, table, args.components, rng=rng_seed)
    bundle = {"preprocessor": {
        "fingerprint": prep.fingerprint,
        "sqrt_mask": prep.sqrt_mask.tolist(),
        "means": prep.means.tolist(),
        "sds": prep.sds.tolist(),
        "dropped": list(prep.dropped),
    }}
    t = global_t
    if args.method == "identity" and local:
        raise ValueError("identity transformations are not fitted locally")
    if args.optimize:
        if args.method == "pls":
            comps = tuple(c for c in DEFAULT_COMPONENT_GRID if c <= min(15, table.n_summaries))
            grid = candidate_grid("pls", alpha_grid(), comps, comps)
            factory = GlobalInitialTransformations(table, "pls", global_t.n_components)
            fv = factory(TransformationParams(1.0, "pls", initial_components=15))
        else:
            grid = candidate_grid("regression", alpha_grid())
            factory, fv = (lambda lam: global_t), global_t
        result = local_projection_optimized(fv, factory, grid, OptimizationConfig(), s_obs, table)
        t = result.transformation
        bundle["chosen"] = {"alpha": result.chosen.alpha, "initial_components": result.chosen.initial_components,
                            "local_components": result.chosen.local_components}
        if args.diagnostics:
            result.diagnostics.to_csv(args.diagnostics)
    elif local:
        lam = TransformationParams(args.alpha, args.method, args.components)
        t = local_projection(global_t, lam, s_obs, table, cv_rng=rng_seed)
    bundle["transformation"] = t.to_dict()
    if s_obs is not None:
        bundle["projected_observed"] = np.asarray(t.apply(s_obs)).tolist()
    Path(args.out).write_text(json.dumps(bundle, indent=1, sort_keys=True) + "\n")


_COMMANDS = {
    "simulate": _cmd_simulate,
    "test-data": _cmd_test_data,
    "run": _cmd_run,
    "plot-data": _cmd_plot_data,
    "transform": _cmd_transform,
}


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("localabc: error: --threads must be at least 1", file=sys.stderr)
        return 2
    try:
        _COMMANDS[args.command](args)
    except Exception as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"localabc {args.command}: error: {msg}", file=sys.stderr)
        # bad inputs are usage errors; anything else is a runtime failure
        return 2 if isinstance(exc, (ConfigError, FileNotFoundError)) else 1
    return 0


def main() -> None:
    sys.exit(cli_main())
