"""Run the seven dimension-reduction methods over test datasets and collect accuracy."""

from __future__ import annotations

import csv
import logging
import multiprocessing
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import SimulationTable, load_table, rng_stream
from ..inference import (
    GlobalInitialTransformations,
    TransformationParams,
    alpha_grid,
    candidate_grid,
    default_alpha,
    local_projection,
    local_projection_optimized,
    make_global_transformation,
    rejection_abc,
    rmse,
)
from ..projections import LinearTransformation
from ..summaries import OutOfSupportWarning, fit_preprocessor
from .config import ExperimentConfig, serialize_config
from .models import get_model, simulate_tables, simulate_test_datasets

log = logging.getLogger(__name__)

REPORT_FIELDS = (
    "n_sims",
    "n_summaries",
    "test_index",
    "method",
    "status",
    "srmse",
    "alpha",
    "initial_components",
    "local_components",
    "reason",
)


@dataclass
class ReportRow:
    n_sims: int
    n_summaries: int
    test_index: int
    method: str
    status: str = "ok"
    srmse: float = float("nan")
    rmse: tuple[float, ...] = ()
    alpha: float | None = None
    initial_components: int | None = None
    local_components: int | None = None
    reason: str = ""
    wall_time: float = 0.0


@dataclass
class ExperimentReport:
    """One row per attempted (table size, summary count, test dataset, method)."""

    model: str
    param_names: tuple[str, ...]
    rows: list[ReportRow] = field(default_factory=list)
    config_text: str = ""

    def header(self) -> list[str]:
        head = list(REPORT_FIELDS[:6]) + [f"rmse_{j + 1}" for j in range(len(self.param_names))]
        return head + list(REPORT_FIELDS[6:])

    def to_csv(self, path) -> None:
        """Write the accuracy table; wall times go to :meth:`timings_to_csv` so this file is reproducible."""
        d = len(self.param_names)
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for r in self.rows:
                rm = list(r.rmse) if r.rmse else [float("nan")] * d
                w.writerow(
                    [r.n_sims, r.n_summaries, r.test_index, r.method, r.status, _num(r.srmse)]
                    + [_num(x) for x in rm]
                    + [_num(r.alpha), _int(r.initial_components), _int(r.local_components), r.reason]
                )

    def timings_to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_sims", "n_summaries", "test_index", "method", "wall_time"])
            for r in self.rows:
                w.writerow([r.n_sims, r.n_summaries, r.test_index, r.method, f"{r.wall_time:.6f}"])

    @classmethod
    def from_csv(cls, path, model: str = "") -> "ExperimentReport":
        with open(Path(path), newline="") as fh:
            reader = csv.DictReader(fh)
            names = [c for c in reader.fieldnames or [] if c.startswith("rmse_")]
            report = cls(model, tuple(names))
            for rec in reader:
                report.rows.append(
                    ReportRow(
                        int(rec["n_sims"]),
                        int(rec["n_summaries"]),
                        int(rec["test_index"]),
                        rec["method"],
                        rec["status"],
                        float(rec["srmse"]) if rec["srmse"] else float("nan"),
                        tuple(float(rec[c]) if rec[c] else float("nan") for c in names),
                        float(rec["alpha"]) if rec["alpha"] else None,
                        int(rec["initial_components"]) if rec["initial_components"] else None,
                        int(rec["local_components"]) if rec["local_components"] else None,
                        rec["reason"],
                    )
                )
        return report

    def values(self, method: str, n_sims: int | None = None, n_summaries: int | None = None) -> np.ndarray:
        """SRMSE per test dataset for one method, ordered by test index (NaN for failures)."""
        rows = [
            r
            for r in self.rows
            if r.method == method
            and (n_sims is None or r.n_sims == n_sims)
            and (n_summaries is None or r.n_summaries == n_summaries)
        ]
        rows.sort(key=lambda r: r.test_index)
        return np.array([r.srmse if r.status == "ok" else np.nan for r in rows])


def _num(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "nan" if np.isnan(x) else repr(x)


def _int(x) -> str:
    return "" if x is None else str(int(x))


# --- per-(N, n_S) context ------------------------------------------------------


class _Setting:
    """Preprocessed table and the global fits shared by every test dataset."""

    def __init__(self, cfg: ExperimentConfig, table_raw: SimulationTable, tests_raw: SimulationTable):
        self.cfg = cfg
        self.n_sims = table_raw.n_sims
        self.n_summaries = table_raw.n_summaries
        self.prep = fit_preprocessor(table_raw)
        self.table = self.prep.apply_table(table_raw)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", OutOfSupportWarning)
            self.observed, self.flags = self.prep.transform(tests_raw.summaries, return_flags=True)
        if caught:
            log.warning("%d test dataset value(s) fall outside the sqrt support", int(self.flags.sum()))
        self.truth = tests_raw.params
        self.timings: dict[str, float] = {}
        methods = set(cfg.methods)
        q = self.table.n_summaries
        self.max_components = min(cfg.max_components, self.n_sims - 1, q)
        self.local_alpha = cfg.local_alpha if cfg.local_alpha is not None else default_alpha(self.n_sims)
        self.alphas = alpha_grid(cfg.log10_alpha_grid)
        self.reg = self.pls = None
        if methods & {"Reg", "localReg", "localRegopt"}:
            t0 = time.perf_counter()
            self.reg = make_global_transformation("regression", self.table)
            self.timings["global_regression"] = time.perf_counter() - t0
        if methods & {"PLS", "PLSopt", "localPLS", "localPLSopt"}:
            t0 = time.perf_counter()
            cv_rng = rng_stream(cfg.seed, "cv-global", self.n_sims, self.n_summaries)
            self.pls = make_global_transformation(
                "pls", self.table, None, self.max_components, cfg.cv_folds, cfg.cv_threshold, cv_rng
            )
            self.timings["global_pls"] = time.perf_counter() - t0
            self.pls_initial = GlobalInitialTransformations(
                self.table, "pls", self.pls.n_components, self.max_components
            )
            self.pls_v = self.pls_initial(TransformationParams(1.0, "pls", initial_components=self.max_components))

    def _components(self, grid_values) -> tuple[int, ...]:
        return tuple(sorted({min(c, self.max_components) for c in grid_values}))

    def run_method(self, method: str, j: int) -> ReportRow:
        cfg = self.cfg
        row = ReportRow(self.n_sims, self.n_summaries, j, method)
        s_obs = self.observed[j]
        t0 = time.perf_counter()
        try:
            t, lam = self._transformation(method, j, s_obs)
            post = rejection_abc(self.table, t, s_obs, cfg.n_final)
            truth = self.truth[j]
            row.rmse = tuple(rmse(post.params[:, k], truth[k]) for k in range(truth.size))
            row.srmse = float(sum(row.rmse))
            row.alpha = lam.alpha
            row.initial_components = lam.initial_components
            if t.kind == "pls":
                row.local_components = t.n_components
        except Exception as exc:  # recorded per row, never dropped
            log.exception("method %s failed on test %d", method, j)
            row.status = "failed"
            row.reason = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        row.wall_time = time.perf_counter() - t0
        # global rows share one fit per setting; charge it to every test dataset
        row.wall_time += self.timings.get({"Reg": "global_regression", "PLS": "global_pls"}.get(method, ""), 0.0)
        return row

    def _transformation(self, method: str, j: int, s_obs) -> tuple[LinearTransformation, TransformationParams]:
        cfg = self.cfg
        if method == "Reg":
            return self.reg, TransformationParams(1.0, "regression")
        if method == "PLS":
            return self.pls, TransformationParams(1.0, "pls", self.pls.n_components)
        if method == "localReg":
            lam = TransformationParams(self.local_alpha, "regression")
            return local_projection(self.reg, lam, s_obs, self.table), lam
        if method == "localPLS":
            lam = TransformationParams(self.local_alpha, "pls", None, self.pls.n_components)
            cv_rng = rng_stream(cfg.seed, "cv-local", self.n_sims, self.n_summaries, j)
            t = local_projection(
                self.pls, lam, s_obs, self.table,
                max_components=self.max_components, cv_folds=cfg.cv_folds, cv_threshold=cfg.cv_threshold, cv_rng=cv_rng,
            )
            return t, TransformationParams(lam.alpha, "pls", t.n_components, self.pls.n_components)
        if method == "localRegopt":
            grid = candidate_grid("regression", self.alphas)
            result = local_projection_optimized(self.reg, lambda lam: self.reg, grid, cfg.opt, s_obs, self.table)
            return result.transformation, result.chosen
        if method == "PLSopt":
            grid = candidate_grid("pls", [1.0], self._components(cfg.pls_opt_components))
            result = local_projection_optimized(self.pls_v, self.pls_initial, grid, cfg.opt, s_obs, self.table)
            return result.transformation, result.chosen
        if method == "localPLSopt":
            comps = self._components(cfg.pls_components_grid)
            grid = candidate_grid("pls", self.alphas, comps, comps)
            result = local_projection_optimized(self.pls_v, self.pls_initial, grid, cfg.opt, s_obs, self.table)
            return result.transformation, result.chosen
        raise ValueError(f"unknown method {method!r}")

    def run_test(self, j: int) -> list[ReportRow]:
        return [self.run_method(m, j) for m in self.cfg.methods]


_WORKER_SETTING: _Setting | None = None


def _worker_run(j: int) -> list[ReportRow]:
    return _WORKER_SETTING.run_test(j)


def _run_setting(setting: _Setting, n_test: int, threads: int) -> list[ReportRow]:
    global _WORKER_SETTING
    if threads <= 1 or n_test <= 1:
        rows = []
        for j in range(n_test):
            rows.extend(setting.run_test(j))
        return rows
    _WORKER_SETTING = setting
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=threads, mp_context=ctx) as pool:
            per_test = list(pool.map(_worker_run, range(n_test)))
    finally:
        _WORKER_SETTING = None
    return [row for rows in per_test for row in rows]


def load_inputs(cfg: ExperimentConfig) -> tuple[dict[int, SimulationTable], dict[int, SimulationTable]]:
    """Reference tables and test datasets, loaded from disk when the config names files."""
    if cfg.table_path:
        table = load_table(cfg.table_path)
        tables = {table.n_summaries: table}
    else:
        tables = simulate_tables(cfg)
    if cfg.test_path:
        tests_table = load_table(cfg.test_path)
        tests = {tests_table.n_summaries: tests_table}
    else:
        tests = simulate_test_datasets(cfg)
    return tables, tests


def run_experiment(
    cfg: ExperimentConfig,
    threads: int = 1,
    tables: dict[int, SimulationTable] | None = None,
    tests: dict[int, SimulationTable] | None = None,
) -> ExperimentReport:
    """Run every configured method on every test dataset and table size.

    Results depend only on the configuration (including its seed): each
    test dataset's work is independent, so ``threads`` changes speed only.
    """
    if tables is None or tests is None:
        loaded_tables, loaded_tests = load_inputs(cfg)
        tables = tables if tables is not None else loaded_tables
        tests = tests if tests is not None else loaded_tests
    names = get_model(cfg.model).param_names
    first = next(iter(tables.values()))
    if first.n_params != len(names):
        names = tuple(f"theta_{j + 1}" for j in range(first.n_params))
    report = ExperimentReport(cfg.model, names, config_text=serialize_config(cfg))
    n_sims_list = cfg.sweep_n_sims or (cfg.n_sims,)
    for n_s in sorted(tables):
        if n_s not in tests:
            raise ValueError(f"no test datasets with {n_s} summaries")
        for n_sims in sorted(set(n_sims_list)):
            table = tables[n_s]
            if n_sims > table.n_sims:
                raise ValueError(f"requested {n_sims} simulations but the table has {table.n_sims}")
            sub = table.subset(rows=slice(0, n_sims))
            tests_raw = tests[n_s]
            if tests_raw.n_sims < cfg.n_test:
                raise ValueError(f"need {cfg.n_test} test datasets, found {tests_raw.n_sims}")
            tests_raw = tests_raw.subset(rows=slice(0, cfg.n_test))
            log.info("setting N=%d n_S=%d", n_sims, n_s)
            setting = _Setting(cfg, sub, tests_raw)
            report.rows.extend(_run_setting(setting, cfg.n_test, threads))
    return report
