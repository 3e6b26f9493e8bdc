from __future__ import annotations

import json
import math
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localabc.core import DimensionError, SimulationTable
from localabc.simulators import RickerParams, simulate_ricker
from localabc.summaries import (
    OutOfSupportWarning,
    UnusableTableError,
    apply_preprocessor,
    autocorrelation,
    autocovariance,
    fit_preprocessor,
    gk_summaries,
    quantile_ranks,
    ricker_summaries,
    ricker_summary_names,
)

GOLDEN = Path(__file__).parent / "data" / "ricker_golden.json"


def test_autocovariance_examples():
    assert autocovariance([7, 7, 7, 7], 2) == 0
    assert autocovariance([1, 2, 3, 4], 0) == 1.25
    assert autocovariance([1, 2, 3, 4], 1) == 0.3125
    with pytest.raises(ValueError):
        autocovariance([1, 2, 3], 3)


def test_autocorrelation_examples():
    assert autocorrelation([1, 2, 3, 4], 1) == 0.25
    assert autocorrelation([3, 1, 4, 1, 5], 0) == 1.0
    assert autocorrelation([2, 2, 2], 1) == 0.0


def python_ricker_summaries(y):
    """Plain-Python reference for the 124 Ricker summaries in their frozen order."""
    n = len(y)
    mean = sum(y) / n
    dev = [v - mean for v in y]

    def acov(lag):
        return sum(dev[t] * dev[t + lag] for t in range(n - lag)) / n

    var = acov(0)
    out = [acov(lag) for lag in range(1, 6)]
    out += [acov(lag) / var if var > 0 else 0.0 for lag in range(1, 6)]
    out += [mean, var]
    out += [float(sum(1 for v in y if v == k)) for k in range(5)]
    out += [math.log(1 + sum(v**i for v in y)) for i in range(2, 7)]
    out += [math.log(1 + mean), math.log(1 + var)]
    return out + list(y) + sorted(y)


def test_ricker_summaries_match_reference_and_golden():
    data = json.loads(GOLDEN.read_text())
    y = simulate_ricker(RickerParams(*data["params"]), np.random.default_rng(data["rng_seed"]))
    assert y.tolist() == data["y"]
    s = ricker_summaries(y)
    assert s.shape == (124,) and len(ricker_summary_names()) == 124
    assert np.allclose(s, python_ricker_summaries(y.tolist()), rtol=1e-12, atol=1e-9)
    assert np.allclose(s, [float(v) for v in data["summaries"]], rtol=1e-13, atol=1e-10)


def test_ricker_all_zero_dataset():
    s = dict(zip(ricker_summary_names(), ricker_summaries(np.zeros(50))))
    assert s["count_eq_0"] == 50 and s["mean"] == 0 and s["var"] == 0
    assert all(s[f"acov_{lag}"] == 0 for lag in range(1, 6))
    assert all(s[f"log1p_sum_pow_{i}"] == 0 for i in range(2, 7))
    assert s["log1p_mean"] == 0 and s["log1p_var"] == 0


def test_ricker_time_and_sorted_blocks():
    y = np.array([3, 1, 2] + [0] * 47, dtype=float)
    s = ricker_summaries(y)
    names = ricker_summary_names()
    t1 = names.index("y_t1")
    assert s[t1 : t1 + 3].tolist() == [3, 1, 2]
    assert s[-3:].tolist() == [1, 2, 3]


def test_ricker_lag0_equals_variance_summary():
    y = simulate_ricker(RickerParams(3.8, 0.5, 10.0), np.random.default_rng(9))
    s = dict(zip(ricker_summary_names(), ricker_summaries(y)))
    assert s["var"] == autocovariance(y, 0)


def test_ricker_wrong_length():
    with pytest.raises(DimensionError):
        ricker_summaries(np.zeros(49))


def test_quantile_ranks():
    r = quantile_ranks(10_000, 200)
    assert r[0] == 25 and r[1] == 75 and r[-1] == 9975
    assert np.all(np.diff(r) == 50)
    assert quantile_ranks(10_000, 1).tolist() == [5000]
    assert quantile_ranks(7, 1).tolist() == [4]  # round(3.5) = 4, halves up
    with pytest.raises(ValueError):
        quantile_ranks(5, 6)


def test_gk_summaries_constant_and_argument_check():
    assert np.all(gk_summaries(np.full(100, 2.5), 10) == 2.5)
    with pytest.raises(ValueError):
        gk_summaries(np.arange(5.0), 6)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=10, max_size=200), st.integers(1, 10))
def test_gk_summaries_sorted(values, nq):
    out = gk_summaries(values, nq)
    assert np.all(np.diff(out) >= 0)


def _raw_table():
    rng = np.random.default_rng(0)
    squares = np.array([1.0, 4.0, 9.0] * 10)
    mixed = rng.normal(size=30)
    mixed[0] = -1.0
    const = np.full(30, 3.0)
    counts = rng.poisson(5.0, size=30).astype(float)
    return SimulationTable(rng.normal(size=(30, 1)), np.column_stack([squares, mixed, const, counts]))


def test_preprocessor_fit_and_apply():
    table = _raw_table()
    prep = fit_preprocessor(table)
    assert prep.sqrt_mask.tolist() == [True, False, True, True]
    assert prep.dropped == (2,)
    out = prep.apply_table(table).summaries
    assert out.shape == (30, 3)
    assert np.all(np.abs(out.mean(axis=0)) < 1e-10)
    assert np.all(np.abs(out.std(axis=0, ddof=1) - 1) < 1e-10)
    roots = np.sqrt(table.summaries[:, 0])
    assert out[0, 0] == pytest.approx((1.0 - roots.mean()) / roots.std(ddof=1))


def test_preprocessor_refit_is_identity():
    table = _raw_table()
    std = fit_preprocessor(table).apply_table(table)
    again = fit_preprocessor(SimulationTable(std.params, std.summaries))
    assert np.all(np.abs(again.means[~again.sqrt_mask]) < 1e-12)
    assert np.all(np.abs(again.sds[~again.sqrt_mask] - 1) < 1e-12)


def test_preprocessor_single_vector_matches_table_row():
    table = _raw_table()
    prep = fit_preprocessor(table)
    assert np.array_equal(apply_preprocessor(prep, table.summaries[4]), prep.apply_table(table).summaries[4])


def test_preprocessor_out_of_support_warns():
    prep = fit_preprocessor(_raw_table())
    with pytest.warns(OutOfSupportWarning):
        out, flags = prep.transform(np.array([-4.0, 0.0, 3.0, 1.0]), return_flags=True)
    assert flags.tolist() == [True, False, False]
    assert out[0] == pytest.approx((-4.0 - prep.means[0]) / prep.sds[0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        prep.transform(np.array([4.0, 0.0, 3.0, 1.0]))


def test_preprocessor_dimension_and_unusable():
    prep = fit_preprocessor(_raw_table())
    with pytest.raises(DimensionError):
        prep.transform(np.zeros(3))
    with pytest.raises(UnusableTableError):
        fit_preprocessor(SimulationTable(np.zeros((5, 1)), np.ones((5, 2))))
