"""Model registry: priors, reference-table simulation and test datasets per model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..core import SimulationTable, rng_stream
from ..simulators import (
    PriorSpec,
    SimulationError,
    sample_gk_order_statistics,
    sample_prior,
    simulate_gk,
    simulate_ricker_batch,
    simulate_toy,
    GkParams,
)
from ..summaries import gk_summaries, quantile_ranks, ricker_summaries_batch, ricker_summary_names

BLOCK_SIZE = 1000
MAX_RETRIES = 10

LOG_SIGMA_LO = math.log(0.1)


@dataclass(frozen=True)
class ModelSpec:
    name: str
    param_names: tuple[str, ...]
    prior: PriorSpec
    # maps prior draws to the reported parameter vector
    to_theta: Callable[[np.ndarray], np.ndarray]


def _ricker_theta(draws: np.ndarray) -> np.ndarray:
    theta = np.array(draws, dtype=np.float64, copy=True)
    theta[..., 1] = np.exp(theta[..., 1])
    return theta


MODELS = {
    # the prior is uniform on log(sigma_e); the parameter reported is sigma_e
    "ricker": ModelSpec(
        "ricker", ("log_r", "sigma_e", "phi"), PriorSpec(((0.0, 10.0), (LOG_SIGMA_LO, 0.0), (0.0, 100.0))), _ricker_theta
    ),
    "gk": ModelSpec("gk", ("A", "B", "g", "k"), PriorSpec(((0.0, 10.0),) * 4), lambda x: np.asarray(x, dtype=np.float64)),
    "toy": ModelSpec("toy", ("theta",), PriorSpec(((0.0, 20.0),)), lambda x: np.asarray(x, dtype=np.float64)),
}


def get_model(name: str) -> ModelSpec:
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None


def summary_widths(cfg) -> list[int]:
    """Candidate-summary counts the configuration asks for."""
    if cfg.model == "ricker":
        return [124]
    if cfg.model == "toy":
        return [1]
    return sorted(set(cfg.sweep_n_quantiles or (cfg.n_quantiles,)))


def _simulate_block(cfg, theta: np.ndarray, rng: np.random.Generator, widths: list[int]) -> dict[int, np.ndarray]:
    if cfg.model == "ricker":
        y = simulate_ricker_batch(theta, rng, cfg.ricker_steps, cfg.ricker_burn_in)
        return {124: ricker_summaries_batch(y)}
    if cfg.model == "toy":
        return {1: simulate_toy(theta[:, 0], cfg.toy_noise_sd, rng)[:, None]}
    if cfg.gk_sampler == "order_stats":
        rank_sets = {w: quantile_ranks(cfg.n_obs, w) for w in widths}
        union = np.unique(np.concatenate(list(rank_sets.values())))
        stats = sample_gk_order_statistics(theta, cfg.n_obs, union, rng, cfg.gk_c)
        return {w: stats[:, np.searchsorted(union, r)] for w, r in rank_sets.items()}
    if cfg.gk_sampler == "direct":
        out = {w: np.empty((theta.shape[0], w)) for w in widths}
        for row, th in enumerate(theta):
            x = simulate_gk(GkParams.from_vector(th, cfg.gk_c), cfg.n_obs, rng)
            for w in widths:
                out[w][row] = gk_summaries(x, w)
        return out
    raise ValueError(f"unknown g-and-k sampler {cfg.gk_sampler!r}")


def _names(cfg, width: int) -> list[str]:
    if cfg.model == "ricker":
        return ricker_summary_names()
    if cfg.model == "toy":
        return ["s"]
    return [f"q_{r}" for r in quantile_ranks(cfg.n_obs, width)]


def simulate_tables(cfg, n_sims: int | None = None) -> dict[int, SimulationTable]:
    """Reference tables keyed by candidate-summary count.

    All tables share the parameter draws and the underlying simulated
    datasets. Block ``b`` of ``BLOCK_SIZE`` simulations draws from the stream
    ``(seed, "table", model, b)``, so the result does not depend on how the
    blocks are scheduled. A block whose simulator fails is redrawn from
    ``(seed, "table-retry", model, b, attempt)``.
    """
    model = get_model(cfg.model)
    prior = cfg.prior or model.prior
    n_sims = n_sims or max(cfg.sweep_n_sims or (cfg.n_sims,))
    widths = summary_widths(cfg)
    params, blocks = [], {w: [] for w in widths}
    failures = 0
    for b, start in enumerate(range(0, n_sims, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n_sims - start)
        rng = rng_stream(cfg.seed, "table", cfg.model, b)
        for attempt in range(MAX_RETRIES + 1):
            theta = model.to_theta(sample_prior(prior, rng, size))
            try:
                out = _simulate_block(cfg, theta, rng, widths)
                break
            except SimulationError:
                failures += 1
                rng = rng_stream(cfg.seed, "table-retry", cfg.model, b, attempt)
        else:
            raise SimulationError(f"block {b} failed {MAX_RETRIES + 1} times")
        params.append(theta)
        for w in widths:
            blocks[w].append(out[w])
    theta = np.vstack(params)
    meta = {"model": cfg.model, "seed": str(cfg.seed), "prior": _prior_str(prior), "failures": str(failures)}
    return {
        w: SimulationTable(theta, np.vstack(blocks[w]), dict(meta, summary_names=",".join(_names(cfg, w))))
        for w in widths
    }


def _prior_str(prior: PriorSpec) -> str:
    return ";".join(f"{lo!r}:{hi!r}" for lo, hi in prior.ranges)


def evaluation_parameters(cfg) -> np.ndarray:
    """True parameters of the test datasets, one row per dataset."""
    n = cfg.n_test
    if cfg.model == "ricker":
        log_sigma = np.linspace(LOG_SIGMA_LO, 0.0, n) if n > 1 else np.array([0.5 * LOG_SIGMA_LO])
        return np.column_stack([np.full(n, cfg.ricker_test_log_r), np.exp(log_sigma), np.full(n, cfg.ricker_test_phi)])
    if cfg.model == "gk":
        return np.tile(np.asarray(cfg.gk_test_theta, dtype=np.float64), (n, 1))
    prior = cfg.prior or get_model("toy").prior
    (lo, hi), = prior.ranges
    return (lo + (hi - lo) * (np.arange(n) + 0.5) / n)[:, None]


def simulate_test_datasets(cfg) -> dict[int, SimulationTable]:
    """Observed-data stand-ins keyed by summary count; dataset ``j`` uses stream ``(seed, "test", model, j)``."""
    theta = evaluation_parameters(cfg)
    widths = summary_widths(cfg)
    rows = {w: [] for w in widths}
    for j, th in enumerate(theta):
        rng = rng_stream(cfg.seed, "test", cfg.model, j)
        if cfg.model == "ricker":
            y = simulate_ricker_batch(th, rng, cfg.ricker_steps, cfg.ricker_burn_in)
            rows[124].append(ricker_summaries_batch(y)[0])
        elif cfg.model == "toy":
            rows[1].append([simulate_toy(th[0], cfg.toy_noise_sd, rng)])
        else:
            x = simulate_gk(GkParams.from_vector(th, cfg.gk_c), cfg.n_obs, rng)
            for w in widths:
                rows[w].append(gk_summaries(x, w))
    meta = {"model": cfg.model, "seed": str(cfg.seed), "role": "test"}
    return {
        w: SimulationTable(theta, np.asarray(rows[w]), dict(meta, summary_names=",".join(_names(cfg, w))))
        for w in widths
    }
