from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localabc.core import SimulationTable, load_table
from localabc.harness import (
    METHOD_NAMES,
    ConfigError,
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    emit_plot_data,
    parse_config,
    run_experiment,
    serialize_config,
)
from localabc.harness.cli import cli_main
from localabc.harness.models import evaluation_parameters, simulate_tables
from localabc.harness.report import LAMBDA_FIELDS, RELATIVE_FIELDS, SRMSE_FIELDS, SUMMARY_FIELDS
from localabc.simulators import PriorSpec

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.cfg")):
        cfg = parse_config(path.read_text(), str(path))
        assert parse_config(serialize_config(cfg)) == cfg


@settings(max_examples=50, deadline=None)
@given(
    st.sampled_from(["ricker", "gk", "toy"]),
    st.integers(1, 10**6),
    st.lists(st.sampled_from(METHOD_NAMES), min_size=1, max_size=7, unique=True),
    st.lists(st.floats(-3, 0), min_size=1, max_size=5),
    st.one_of(st.none(), st.floats(1e-3, 1)),
    st.one_of(st.none(), st.lists(st.tuples(st.floats(-100, 0), st.floats(0.5, 100)), min_size=1, max_size=3)),
)
def test_config_round_trip(model, seed, methods, alphas, local_alpha, prior):
    cfg = ExperimentConfig(
        model=model,
        seed=seed,
        methods=tuple(methods),
        log10_alpha_grid=tuple(alphas),
        local_alpha=local_alpha,
        prior=None if prior is None else PriorSpec(tuple(prior)),
    )
    assert parse_config(serialize_config(cfg)) == cfg


@pytest.mark.parametrize(
    "text",
    ["model = weibull\n", "n_sims = 0\n", "methods = \n", "methods = Reg, Lasso\n", "bogus = 1\n", "n_sims 5\n",
     "n_sims = 5\nn_sims = 6\n", "n_sims = many\n"],
)
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_table_generation_is_block_deterministic():
    cfg = ExperimentConfig(model="gk", n_sims=2500, n_quantiles=10)
    (a,) = simulate_tables(cfg).values()
    (b,) = simulate_tables(cfg, 1200).values()
    assert a.n_sims == 2500 and a.n_summaries == 10
    # block streams make the first rows independent of the total size
    assert np.array_equal(a.params[:1000], b.params[:1000]) and np.array_equal(a.summaries[:1000], b.summaries[:1000])
    assert np.all(np.diff(a.summaries, axis=1) >= 0)


def test_gk_sweep_tables_share_draws():
    cfg = ExperimentConfig(model="gk", n_sims=1000, sweep_n_quantiles=(25, 50))
    tables = simulate_tables(cfg)
    assert sorted(tables) == [25, 50]
    assert np.array_equal(tables[25].params, tables[50].params)
    assert tables[25].summary_names[0] == "q_200" and tables[50].summary_names[0] == "q_100"


def test_evaluation_parameters():
    ricker = evaluation_parameters(ExperimentConfig(model="ricker", n_test=20))
    assert ricker.shape == (20, 3)
    assert np.all(ricker[:, 0] == 3.8) and np.all(ricker[:, 2] == 10.0)
    assert ricker[0, 1] == pytest.approx(0.1) and ricker[-1, 1] == pytest.approx(1.0)
    assert np.allclose(np.diff(np.log(ricker[:, 1])), np.log(10) / 19)
    gk = evaluation_parameters(ExperimentConfig(model="gk", n_test=3))
    assert np.all(gk == [3, 1, 2, 0.5])


def test_ricker_table_keeps_all_zero_datasets():
    cfg = ExperimentConfig(model="ricker", n_sims=2000)
    (table,) = simulate_tables(cfg).values()
    assert table.n_summaries == 124
    count0 = table.summaries[:, table.summary_names.index("count_eq_0")]
    assert np.mean(count0 == 50) > 0.1


def _toy_report(methods=("Reg",), n_sims=1000, n_test=5, seed=1, threads=1, **kw):
    cfg = ExperimentConfig(model="toy", n_sims=n_sims, n_test=n_test, methods=methods, seed=seed, **kw)
    return run_experiment(cfg, threads=threads)


def test_smoke_single_method():
    report = _toy_report()
    assert len(report.rows) == 5
    assert all(r.status == "ok" and np.isfinite(r.srmse) for r in report.rows)


def test_report_is_byte_identical_and_thread_invariant(tmp_path):
    methods = ("Reg", "localReg", "localRegopt", "PLS", "localPLS")
    _toy_report(methods, n_sims=1500).to_csv(tmp_path / "a.csv")
    _toy_report(methods, n_sims=1500).to_csv(tmp_path / "b.csv")
    _toy_report(methods, n_sims=1500, threads=2).to_csv(tmp_path / "c.csv")
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()


def test_failures_are_recorded_not_dropped():
    report = _toy_report(("Reg", "localReg"), n_sims=200, local_alpha=0.01)
    assert len(report.rows) == 10
    failed = [r for r in report.rows if r.method == "localReg"]
    assert all(r.status == "failed" and "TooFewSamplesError" in r.reason for r in failed)
    assert all(r.status == "ok" for r in report.rows if r.method == "Reg")


def test_report_csv_round_trip(tmp_path):
    report = _toy_report(("Reg", "localRegopt"))
    report.to_csv(tmp_path / "r.csv")
    back = ExperimentReport.from_csv(tmp_path / "r.csv")
    assert [r.srmse for r in back.rows] == [r.srmse for r in report.rows]
    assert [r.alpha for r in back.rows] == [r.alpha for r in report.rows]
    header = (tmp_path / "r.csv").read_text().splitlines()[0]
    assert header == (
        "n_sims,n_summaries,test_index,method,status,srmse,rmse_1,alpha,initial_components,local_components,reason"
    )


def _synthetic_report(values: dict[str, list[float]]) -> ExperimentReport:
    report = ExperimentReport("toy", ("theta",))
    for method, vals in values.items():
        for j, v in enumerate(vals):
            report.rows.append(ReportRow(100, 1, j, method, "ok", v, (v,), 1.0))
    return report


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_plot_data_headers_are_frozen(tmp_path):
    emit_plot_data(_synthetic_report({"Reg": [1.0, 2.0], "localReg": [1.0, 1.0]}), tmp_path)
    assert _read(tmp_path / "srmse_by_method.csv")[0] == list(SRMSE_FIELDS) == [
        "n_sims", "n_summaries", "method", "test_index", "srmse"
    ]
    assert _read(tmp_path / "relative_srmse.csv")[0] == list(RELATIVE_FIELDS) == [
        "n_sims", "n_summaries", "numerator", "denominator", "n_pairs", "median", "q05", "q95"
    ]
    assert _read(tmp_path / "chosen_lambda.csv")[0] == list(LAMBDA_FIELDS) == [
        "n_sims", "n_summaries", "method", "n", "alpha_mean", "alpha_q05", "alpha_q95",
        "initial_components_mean", "local_components_mean",
    ]
    assert _read(tmp_path / "srmse_summary.csv")[0] == list(SUMMARY_FIELDS)


def test_relative_srmse_is_median_of_per_dataset_ratios(tmp_path):
    emit_plot_data(_synthetic_report({"Reg": [2.0, 1.0, 1.0], "localReg": [1.0, 1.0, 2.0]}), tmp_path)
    rows = _read(tmp_path / "relative_srmse.csv")
    assert rows[1][:5] == ["100", "1", "localReg", "Reg", "3"]
    assert float(rows[1][5]) == 1.0  # median of {0.5, 1.0, 2.0}


def test_single_method_relative_file_is_header_only(tmp_path):
    emit_plot_data(_synthetic_report({"Reg": [1.0, 2.0]}), tmp_path)
    assert len(_read(tmp_path / "relative_srmse.csv")) == 1


def test_plot_data_recomputable_from_report(tmp_path):
    report = _toy_report(("Reg", "localReg", "localRegopt"), n_test=6)
    emit_plot_data(report, tmp_path)
    rows = _read(tmp_path / "srmse_by_method.csv")[1:]
    assert sorted(float(r[4]) for r in rows) == sorted(r.srmse for r in report.rows)
    summary = {r[2]: r for r in _read(tmp_path / "srmse_summary.csv")[1:]}
    assert float(summary["Reg"][5]) == pytest.approx(np.mean(report.values("Reg")), rel=1e-15)


def test_emit_plot_data_rejects_empty_report(tmp_path):
    with pytest.raises(ValueError):
        emit_plot_data(ExperimentReport("toy", ("theta",)), tmp_path)


# --- command line -------------------------------------------------------------


def test_cli_simulate_ricker(tmp_path):
    out = tmp_path / "t.csv"
    assert cli_main(["simulate", "--model", "ricker", "--n", "1000", "--seed", "1", "--out", str(out)]) == 0
    table = load_table(out)
    assert (table.n_sims, table.n_params, table.n_summaries) == (1000, 3, 124)


def test_cli_run_twice_identical(tmp_path):
    cfg = tmp_path / "gk_small.cfg"
    cfg.write_text("model = gk\nn_sims = 3000\nn_quantiles = 10\nn_test = 2\nmethods = Reg, localRegopt, PLS\n")
    for name in ("a", "b"):
        assert cli_main(["run", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    assert "seed = 7" in (tmp_path / "a" / "config.cfg").read_text()
    assert cli_main(["plot-data", "--report", str(tmp_path / "a" / "report.csv"), "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "relative_srmse.csv").exists()


def test_cli_usage_errors(tmp_path, capsys):
    assert cli_main(["run", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) != 0
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and "missing.cfg" in err
    assert cli_main(["simulate", "--model", "gk", "--bogus"]) != 0
    assert cli_main([]) != 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("n_sims = -3\n")
    assert cli_main(["run", "--config", str(bad), "--out", str(tmp_path)]) != 0


def test_cli_test_data_and_transform(tmp_path):
    table, obs, bundle = tmp_path / "t.lfit", tmp_path / "obs.csv", tmp_path / "b.json"
    assert cli_main(["simulate", "--model", "gk", "--n", "2000", "--quantiles", "15", "--out", str(table)]) == 0
    assert cli_main(["test-data", "--model", "gk", "--n-test", "2", "--quantiles", "15", "--out", str(obs)]) == 0
    assert load_table(obs).n_sims == 2
    args = ["transform", "--table", str(table), "--observed", str(obs), "--out", str(bundle)]
    assert cli_main(args + ["--method", "pls", "--alpha", "0.25"]) == 0
    import json

    data = json.loads(bundle.read_text())
    assert data["transformation"]["kind"] == "pls" and len(data["projected_observed"]) >= 1
    diag = tmp_path / "d.csv"
    assert cli_main(args + ["--optimize", "--diagnostics", str(diag)]) == 0
    assert json.loads(bundle.read_text())["chosen"]["alpha"] > 0 and diag.exists()
    # a local fit needs an observed dataset
    assert cli_main(["transform", "--table", str(table), "--alpha", "0.5", "--out", str(bundle)]) != 0


def test_external_tables_are_accepted(tmp_path):
    rng = np.random.default_rng(0)
    theta = rng.uniform(0, 5, size=(600, 2))
    S = np.column_stack([theta, theta**2]) + 0.1 * rng.normal(size=(600, 4))
    tests_theta = rng.uniform(1, 4, size=(3, 2))
    tests_S = np.column_stack([tests_theta, tests_theta**2])
    cfg = replace(ExperimentConfig(model="toy", n_sims=600, n_test=3, methods=("Reg", "localReg")))
    report = run_experiment(cfg, tables={4: SimulationTable(theta, S)}, tests={4: SimulationTable(tests_theta, tests_S)})
    assert report.param_names == ("theta_1", "theta_2")
    assert all(r.status == "ok" for r in report.rows)
