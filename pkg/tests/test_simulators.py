from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from localabc.simulators import (
    GkParams,
    PriorSpec,
    RickerParams,
    gk_quantile,
    sample_gk_order_statistics,
    sample_prior,
    simulate_gk,
    simulate_ricker,
    simulate_ricker_batch,
    simulate_toy,
    standard_normal_quantile,
)


def normal_cdf(z):
    # erfc keeps full relative precision in the lower tail
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def newton_quantile(x):
    # independent oracle: Newton iteration on the error-function CDF
    z = 0.0
    for _ in range(100):
        step = (normal_cdf(z) - x) / (math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi))
        z -= step
        if abs(step) < 1e-16:
            break
    return z


def test_normal_quantile_examples():
    assert standard_normal_quantile(0.5) == 0.0
    assert abs(standard_normal_quantile(0.975) - 1.959963985) < 1e-9
    assert standard_normal_quantile(1 - 0.3) == pytest.approx(-standard_normal_quantile(0.3), abs=1e-15)


@pytest.mark.parametrize("x", [1e-10, 0.001, 0.1, 0.3, 0.5, 0.6, 0.9, 0.975, 0.999])
def test_normal_quantile_matches_newton_oracle(x):
    z = standard_normal_quantile(x)
    assert abs(z - newton_quantile(x)) < 1e-9 * max(1.0, abs(z))
    assert abs(normal_cdf(z) - x) <= 1e-12


@pytest.mark.parametrize("x", [0.0, 1.0, -0.1, 1.5])
def test_normal_quantile_domain(x):
    with pytest.raises(ValueError):
        standard_normal_quantile(x)


def test_gk_quantile_examples():
    assert gk_quantile(0.5, GkParams(3, 1, 2, 0.5)) == 3.0
    for x in (0.01, 0.2, 0.77):
        assert gk_quantile(x, GkParams(0, 1, 0, 0)) == pytest.approx(standard_normal_quantile(x), abs=1e-15)
    assert gk_quantile(0.8413447461, GkParams(0, 2, 0, 0)) == pytest.approx(2.0, abs=1e-9)


def test_gk_quantile_matches_exponential_form():
    # the implementation uses tanh; check against the textbook exponential form
    p = GkParams(1.5, 0.7, 2.5, 0.3)
    for x in np.linspace(0.01, 0.99, 25):
        z = newton_quantile(x)
        expo = math.exp(-p.g * z)
        ref = p.A + p.B * (1 + p.c * (1 - expo) / (1 + expo)) * (1 + z * z) ** p.k * z
        assert gk_quantile(x, p) == pytest.approx(ref, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("theta", [(3, 1, 2, 0.5), (0, 1, 0, 0), (5, 9, 10, 10), (1, 0.1, 0.01, 0), (2, 3, 7, 0.05)])
def test_gk_quantile_strictly_increasing(theta):
    rng = np.random.default_rng(2)
    x = np.sort(rng.uniform(1e-6, 1 - 1e-6, size=(500, 2)), axis=1)
    x = x[x[:, 0] < x[:, 1]]
    q = gk_quantile(x, GkParams(*theta))
    assert np.all(q[:, 0] < q[:, 1])


def test_gk_params_validation():
    with pytest.raises(ValueError):
        GkParams(0, 0, 1, 1)
    with pytest.raises(ValueError):
        GkParams(0, 1, 1, -0.5)


def test_simulate_gk_median_and_determinism():
    x = simulate_gk(GkParams(3, 1, 2, 0.5), 10_000, np.random.default_rng(11))
    assert abs(np.median(x) - 3) < 0.1
    assert np.array_equal(x, simulate_gk(GkParams(3, 1, 2, 0.5), 10_000, np.random.default_rng(11)))
    n = 10_000
    z = simulate_gk(GkParams(0, 1, 0, 0), n, np.random.default_rng(12))
    assert abs(z.mean()) < 4 / math.sqrt(n)


def test_simulate_gk_empirical_quantiles_within_five_se():
    p = GkParams(3, 1, 2, 0.5)
    n = 100_000
    x = np.sort(simulate_gk(p, n, np.random.default_rng(13)))
    for prob in np.arange(0.1, 0.91, 0.1):
        emp = np.quantile(x, prob)
        true = gk_quantile(prob, p)
        # asymptotic s.e. of a sample quantile: sqrt(p(1-p)/n) / density
        h = 1e-5
        density = 2 * h / (gk_quantile(prob + h, p) - gk_quantile(prob - h, p))
        se = math.sqrt(prob * (1 - prob) / n) / density
        assert abs(emp - true) < 5 * se


def test_order_statistic_sampler_matches_sorting():
    # the gamma-spacing sampler and sorting direct draws agree in distribution
    theta = np.array([[3.0, 1.0, 2.0, 0.5]])
    n, ranks = 200, np.array([5, 50, 100, 195])
    rng = np.random.default_rng(21)
    fast = sample_gk_order_statistics(np.repeat(theta, 3000, axis=0), n, ranks, rng)
    p = GkParams(*theta[0])
    slow = np.array([np.sort(simulate_gk(p, n, rng))[ranks - 1] for _ in range(3000)])
    for j in range(ranks.size):
        assert stats.ks_2samp(fast[:, j], slow[:, j]).pvalue > 1e-3


def test_order_statistic_sampler_sorted_rows():
    theta = np.random.default_rng(0).uniform(0, 10, size=(50, 4))
    out = sample_gk_order_statistics(theta, 10_000, np.arange(25, 10_000, 50), np.random.default_rng(1))
    assert out.shape == (50, 200)
    assert np.all(np.diff(out, axis=1) >= 0)


def test_ricker_fixed_point_and_length():
    y, latent = simulate_ricker(RickerParams(1.0, 0.0, 10.0), np.random.default_rng(0), return_latent=True)
    assert y.shape == (50,)
    assert np.all(latent == 1.0)


def test_ricker_deterministic_recursion_bitwise():
    log_r = 3.8
    _, latent = simulate_ricker(RickerParams(log_r, 0.0, 10.0), np.random.default_rng(0), return_latent=True)
    pop = np.float64(1.0)
    for t in range(100):
        pop = pop * np.exp(np.float64(log_r) - pop + 0.0)
        assert latent[t + 1] == pop


def test_ricker_phi_zero_gives_zeros():
    y = simulate_ricker(RickerParams(3.8, 0.3, 0.0), np.random.default_rng(1))
    assert np.all(y == 0)


def test_ricker_counts_are_nonnegative_integers_and_deterministic():
    theta = np.array([[3.8, 0.3, 10.0], [5.0, 0.8, 50.0]])
    a = simulate_ricker_batch(theta, np.random.default_rng(4))
    b = simulate_ricker_batch(theta, np.random.default_rng(4))
    assert a.shape == (2, 50) and np.array_equal(a, b)
    assert np.all(a >= 0) and np.all(a == np.round(a))


def test_ricker_rejects_bad_lengths():
    with pytest.raises(ValueError):
        simulate_ricker_batch(np.array([[1.0, 0.1, 1.0]]), np.random.default_rng(0), steps=10, burn_in=10)


def test_toy_examples():
    rng = np.random.default_rng(0)
    assert simulate_toy(0.0, 1e-12, rng) == pytest.approx(0.0, abs=1e-9)
    assert simulate_toy(10.0, 1e-12, rng) == pytest.approx(15.0, abs=1e-9)
    assert simulate_toy(4.0, 1.0, np.random.default_rng(3)) == simulate_toy(4.0, 1.0, np.random.default_rng(3))
    with pytest.raises(ValueError):
        simulate_toy(1.0, 0.0, rng)


def test_prior_support_and_validation():
    spec = PriorSpec(((0.0, 10.0), (math.log(0.1), 0.0), (0.0, 100.0)))
    draws = sample_prior(spec, np.random.default_rng(0), 100_000)
    assert np.all(draws.min(axis=0) >= spec.lower) and np.all(draws.max(axis=0) <= spec.upper)
    assert np.all(draws.min(axis=0) < spec.lower + 0.01 * (spec.upper - spec.lower))
    with pytest.raises(ValueError):
        PriorSpec(((1.0, 1.0),))
    with pytest.raises(ValueError):
        PriorSpec(((0.0, math.inf),))
