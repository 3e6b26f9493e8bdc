"""Plot-ready aggregates of an experiment report.

Every value written here is recomputed from the report rows; nothing is
carried that the raw report does not contain.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .experiment import ExperimentReport

SRMSE_FIELDS = ("n_sims", "n_summaries", "method", "test_index", "srmse")
RELATIVE_FIELDS = ("n_sims", "n_summaries", "numerator", "denominator", "n_pairs", "median", "q05", "q95")
LAMBDA_FIELDS = (
    "n_sims",
    "n_summaries",
    "method",
    "n",
    "alpha_mean",
    "alpha_q05",
    "alpha_q95",
    "initial_components_mean",
    "local_components_mean",
)
SUMMARY_FIELDS = ("n_sims", "n_summaries", "method", "n_ok", "n_failed", "mean", "median", "q05", "q95")

# (numerator, denominator) pairs reported as per-dataset SRMSE ratios
RATIO_PAIRS = (
    ("localReg", "Reg"),
    ("localRegopt", "Reg"),
    ("localPLS", "PLS"),
    ("localPLSopt", "PLS"),
    ("PLSopt", "PLS"),
    ("localRegopt", "localReg"),
    ("localPLSopt", "localPLS"),
)


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "nan" if np.isnan(x) else repr(x)


def _settings(report: ExperimentReport) -> list[tuple[int, int]]:
    return sorted({(r.n_sims, r.n_summaries) for r in report.rows})


def _methods(report: ExperimentReport) -> list[str]:
    seen: dict[str, None] = {}
    for r in report.rows:
        seen.setdefault(r.method, None)
    return list(seen)


def paired_ratios(report: ExperimentReport, numerator: str, denominator: str, n_sims: int, n_summaries: int) -> np.ndarray:
    """Per-dataset SRMSE ratios over the test datasets where both methods succeeded."""
    num = {r.test_index: r.srmse for r in report.rows if r.method == numerator and r.status == "ok"
           and r.n_sims == n_sims and r.n_summaries == n_summaries}
    den = {r.test_index: r.srmse for r in report.rows if r.method == denominator and r.status == "ok"
           and r.n_sims == n_sims and r.n_summaries == n_summaries}
    common = sorted(set(num) & set(den))
    return np.array([num[j] / den[j] for j in common], dtype=np.float64)


def relative_srmse(report: ExperimentReport) -> list[list]:
    rows = []
    methods = set(_methods(report))
    for n_sims, n_s in _settings(report):
        for a, b in RATIO_PAIRS:
            if a not in methods or b not in methods:
                continue
            ratios = paired_ratios(report, a, b, n_sims, n_s)
            if ratios.size == 0:
                rows.append([n_sims, n_s, a, b, 0, None, None, None])
                continue
            q05, med, q95 = np.quantile(ratios, [0.05, 0.5, 0.95])
            rows.append([n_sims, n_s, a, b, ratios.size, med, q05, q95])
    return rows


def emit_plot_data(report: ExperimentReport, out_dir) -> list[Path]:
    """Write ``srmse_by_method.csv``, ``relative_srmse.csv``, ``chosen_lambda.csv`` and ``srmse_summary.csv``."""
    if not report.rows:
        raise ValueError("report is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    path = out / "srmse_by_method.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SRMSE_FIELDS)
        for r in report.rows:
            if r.status == "ok":
                w.writerow([r.n_sims, r.n_summaries, r.method, r.test_index, _fmt(r.srmse)])
    paths.append(path)

    path = out / "relative_srmse.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RELATIVE_FIELDS)
        for row in relative_srmse(report):
            w.writerow(row[:5] + [_fmt(v) for v in row[5:]])
    paths.append(path)

    path = out / "chosen_lambda.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LAMBDA_FIELDS)
        for n_sims, n_s in _settings(report):
            for method in _methods(report):
                rows = [r for r in report.rows if r.method == method and r.status == "ok"
                        and r.n_sims == n_sims and r.n_summaries == n_s]
                if not rows:
                    continue
                alpha = np.array([r.alpha for r in rows if r.alpha is not None], dtype=np.float64)
                init = [r.initial_components for r in rows if r.initial_components is not None]
                loc = [r.local_components for r in rows if r.local_components is not None]
                qa = np.quantile(alpha, [0.05, 0.95]) if alpha.size else (None, None)
                w.writerow([
                    n_sims, n_s, method, len(rows),
                    _fmt(alpha.mean() if alpha.size else None), _fmt(qa[0]), _fmt(qa[1]),
                    _fmt(np.mean(init) if init else None), _fmt(np.mean(loc) if loc else None),
                ])
    paths.append(path)

    path = out / "srmse_summary.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for n_sims, n_s in _settings(report):
            for method in _methods(report):
                rows = [r for r in report.rows if r.method == method and r.n_sims == n_sims and r.n_summaries == n_s]
                if not rows:
                    continue
                vals = np.array([r.srmse for r in rows if r.status == "ok"], dtype=np.float64)
                stats = [vals.mean(), *np.quantile(vals, [0.5, 0.05, 0.95])] if vals.size else [None] * 4
                w.writerow([n_sims, n_s, method, vals.size, len(rows) - vals.size] + [_fmt(v) for v in stats])
    paths.append(path)
    return paths
