"""Rejection ABC, posterior accuracy metrics, and local projection fitting.

``local_projection`` fits a projection on the simulations nearest to a target
under an initial transformation. ``local_projection_optimized`` chooses the
neighbourhood size and component counts by scoring candidate settings on
validation simulations close to the observed data.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import DimensionError, SimulationTable, as_index_array, distances_to, select_k_nearest
from .projections import (
    MIN_FIT_SIZE,
    CrossProducts,
    LinearTransformation,
    TooFewSamplesError,
    _ols_coefficients,
    _RunningSums,
    _simpls,
    fit_ols,
    fit_pls,
    identity_transformation,
    select_pls_components,
)

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_LOG10_ALPHAS",
    "DEFAULT_COMPONENT_GRID",
    "TransformationParams",
    "OptimizationConfig",
    "PosteriorSample",
    "OptimizationDiagnostics",
    "OptimizedProjection",
    "GlobalInitialTransformations",
    "neighborhood_size",
    "default_alpha",
    "alpha_grid",
    "candidate_grid",
    "rejection_abc",
    "rmse",
    "srmse",
    "local_projection",
    "local_projection_optimized",
    "make_global_transformation",
]

DEFAULT_LOG10_ALPHAS = tuple(round(-1.5 + 0.15 * i, 2) for i in range(10))
DEFAULT_COMPONENT_GRID = (1, 2, 3, 5, 8, 11, 15)
METHODS = ("regression", "pls")


@dataclass(frozen=True)
class TransformationParams:
    """One candidate setting: neighbourhood fraction plus method parameters.

    ``local_components`` of ``None`` on a PLS setting means "choose by
    cross-validation on the neighbourhood"; ``initial_components`` is only
    read by initial-transformation factories.
    """

    alpha: float
    method: str = "regression"
    local_components: int | None = None
    initial_components: int | None = None

    def __post_init__(self) -> None:
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("local_components", "initial_components"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ValueError(f"{name} must be at least 1")


@dataclass(frozen=True)
class OptimizationConfig:
    n_valid: int = 20
    n_post: int = 200
    n_final: int = 100

    def __post_init__(self) -> None:
        if self.n_valid < 1 or self.n_post < 1 or self.n_final < 1:
            raise ValueError("n_valid, n_post and n_final must be positive")


@dataclass(frozen=True, eq=False)
class PosteriorSample:
    indices: np.ndarray
    params: np.ndarray

    def __len__(self) -> int:
        return self.indices.size


def neighborhood_size(alpha: float, n: int) -> int:
    """``round(alpha * n)`` with halves rounded up."""
    return int(math.floor(alpha * n + 0.5))


def default_alpha(n: int) -> float:
    """500 nearest simulations, or the whole table when it is smaller."""
    return min(1.0, 500.0 / n)


def alpha_grid(log10_alphas: Sequence[float] = DEFAULT_LOG10_ALPHAS) -> tuple[float, ...]:
    return tuple(float(10.0**a) for a in log10_alphas)


def candidate_grid(
    method: str,
    alphas: Sequence[float],
    local_components: Sequence[int] | None = None,
    initial_components: Sequence[int] | None = None,
) -> tuple[TransformationParams, ...]:
    """Cartesian product of the candidate values, ordered initial > alpha > local."""
    inits = list(initial_components) if initial_components else [None]
    locals_ = list(local_components) if local_components else [None]
    grid = [
        TransformationParams(float(a), method, lc, ic) for ic in inits for a in alphas for lc in locals_
    ]
    if len(set(grid)) != len(grid):
        raise ValueError("candidate grid contains duplicates")
    return tuple(grid)


# --- rejection ABC and accuracy --------------------------------------------


def rejection_abc(
    table: SimulationTable,
    t: LinearTransformation,
    s_obs,
    n_accept: int,
    exclude: Sequence[int] = (),
    projected: np.ndarray | None = None,
) -> PosteriorSample:
    """Accept the ``n_accept`` simulations nearest to ``s_obs`` after transformation.

    ``projected`` may carry ``t`` already applied to the table summaries.
    """
    exclude = as_index_array(exclude, table.n_sims)
    if not 1 <= n_accept <= table.n_sims - exclude.size:
        raise ValueError(f"n_accept must be in [1, {table.n_sims - exclude.size}], got {n_accept}")
    if projected is None:
        projected = t.apply(table.summaries)
    dist = distances_to(projected, t.apply(s_obs))
    dist[exclude] = np.inf
    idx = select_k_nearest(dist, n_accept)
    return PosteriorSample(idx, table.params[idx])


def rmse(samples, truth: float) -> float:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("cannot compute RMSE of an empty sample")
    return float(np.sqrt(np.mean((x - truth) ** 2)))


def srmse(sample, truth) -> float:
    """Sum over parameter components of the posterior-sample RMSE."""
    params = sample.params if isinstance(sample, PosteriorSample) else np.asarray(sample, dtype=np.float64)
    params = np.atleast_2d(params)
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if params.shape[1] != truth.size:
        raise DimensionError(f"sample has {params.shape[1]} parameters, truth has {truth.size}")
    return float(sum(rmse(params[:, j], truth[j]) for j in range(truth.size)))


def _srmse_rows(params: np.ndarray, truth: np.ndarray) -> float:
    return float(np.sum(np.sqrt(np.mean((params - truth) ** 2, axis=0))))


# --- global transformations --------------------------------------------------


def make_global_transformation(
    method: str,
    table: SimulationTable,
    n_components: int | None = None,
    max_components: int = 15,
    folds: int = 10,
    threshold_frac: float = 0.01,
    rng: np.random.Generator | int | None = 0,
) -> LinearTransformation:
    """Fit ``identity``, ``regression`` or ``pls`` on every row of a preprocessed table.

    For PLS without ``n_components`` the count is chosen by cross-validation.
    """
    ref = table.meta.get("preprocessor")
    S, theta = table.summaries, table.params
    if method == "identity":
        return identity_transformation(table.n_summaries, ref)
    if method == "regression":
        return fit_ols(S, theta, preproc_ref=ref)
    if method == "pls":
        limit = min(table.n_sims - 1, table.n_summaries)
        if n_components is None:
            n_components = select_pls_components(S, theta, min(max_components, limit), folds, threshold_frac, rng)
        return fit_pls(S, theta, min(n_components, limit), preproc_ref=ref)
    raise ValueError(f"unknown method {method!r}")


class GlobalInitialTransformations:
    """Cached global initial transformations, keyed by ``initial_components``.

    For PLS one SIMPLS fit with the largest count is made and truncated, which
    gives exactly the fits a smaller count would produce.
    """

    def __init__(self, table: SimulationTable, method: str, default_components: int | None = None, max_components: int = 15):
        self.table = table
        self.method = method
        self.default_components = default_components
        self.max_components = min(max_components, table.n_sims - 1, table.n_summaries)
        self._base: LinearTransformation | None = None
        self._cache: dict[int | None, LinearTransformation] = {}

    def __call__(self, params: TransformationParams | None = None) -> LinearTransformation:
        if self.method != "pls":
            if None not in self._cache:
                self._cache[None] = make_global_transformation(self.method, self.table)
            return self._cache[None]
        c = params.initial_components if params is not None else None
        c = c if c is not None else self.default_components
        if c is None:
            raise ValueError("PLS initial transformation needs a component count")
        c = min(c, self.max_components)
        if c not in self._cache:
            if self._base is None:
                self._base = make_global_transformation("pls", self.table, n_components=self.max_components)
            self._cache[c] = self._base.truncate(c)
        return self._cache[c]


# --- Algorithm 1 -------------------------------------------------------------


def _neighborhood_order(f1: LinearTransformation, projected: np.ndarray, target) -> np.ndarray:
    dist = distances_to(projected, f1.apply(target))
    return np.lexsort((np.arange(dist.size), dist))


def _check_feasible(params: TransformationParams, n: int, q: int) -> int:
    m = neighborhood_size(params.alpha, n)
    if m < MIN_FIT_SIZE:
        raise TooFewSamplesError(f"alpha={params.alpha:g} gives {m} rows on a table of {n}; need {MIN_FIT_SIZE}")
    if params.method == "pls" and params.local_components is not None:
        limit = min(m - 1, q)
        if params.local_components > limit:
            raise TooFewSamplesError(
                f"{params.local_components} PLS components exceed the limit {limit} for {m} rows"
            )
    return m


def local_projection(
    f1: LinearTransformation,
    params: TransformationParams,
    s_obs,
    table: SimulationTable,
    projected: np.ndarray | None = None,
    max_components: int = 15,
    cv_folds: int = 10,
    cv_threshold: float = 0.01,
    cv_rng: np.random.Generator | int | None = 0,
) -> LinearTransformation:
    """Fit ``params.method`` on the ``round(alpha N)`` simulations nearest ``s_obs`` under ``f1``.

    The returned transformation records the neighbourhood (ascending
    distance, ties by index) in ``fit_indices``. ``projected`` may carry
    ``f1`` already applied to the table.
    """
    n, q = table.n_sims, table.n_summaries
    m = _check_feasible(params, n, q)
    if projected is None:
        projected = f1.apply(table.summaries)
    order = _neighborhood_order(f1, projected, s_obs)
    neighborhood = order[:m]
    rows = np.sort(neighborhood)
    S, theta = table.summaries[rows], table.params[rows]
    ref = table.meta.get("preprocessor")
    if params.method == "regression":
        t = fit_ols(S, theta, fit_indices=neighborhood, preproc_ref=ref)
    else:
        c = params.local_components
        if c is None:
            cap = min(max_components, m - 1, q)
            folds = min(cv_folds, m)
            c = select_pls_components(S, theta, cap, folds, cv_threshold, cv_rng)
        t = fit_pls(S, theta, c, fit_indices=neighborhood, preproc_ref=ref)
    t.meta.update(alpha=params.alpha, neighborhood_size=m)
    return t


# --- Algorithm 2 -------------------------------------------------------------


@dataclass(eq=False)
class OptimizationDiagnostics:
    """Validation scores for every candidate setting.

    ``srmse[l, j]`` is the SRMSE of candidate ``l`` on validation row
    ``valid_indices[j]`` (NaN where the candidate was skipped).
    """

    grid: tuple[TransformationParams, ...]
    valid_indices: np.ndarray
    srmse: np.ndarray
    chosen_index: int
    skipped: dict[int, str] = field(default_factory=dict)
    leak_violations: int = 0
    samples: dict[tuple[int, int], np.ndarray] | None = None

    @property
    def srmse_total(self) -> np.ndarray:
        return self.srmse.sum(axis=1)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["grid_index", "alpha", "method", "initial_components", "local_components", "srmse_sum", "chosen", "status", "reason"]
            )
            totals = self.srmse_total
            for l, lam in enumerate(self.grid):
                skipped = l in self.skipped
                w.writerow(
                    [
                        l,
                        repr(lam.alpha),
                        lam.method,
                        "" if lam.initial_components is None else lam.initial_components,
                        "" if lam.local_components is None else lam.local_components,
                        "" if skipped else repr(float(totals[l])),
                        int(l == self.chosen_index),
                        "skipped" if skipped else "ok",
                        self.skipped.get(l, ""),
                    ]
                )


@dataclass(eq=False)
class OptimizedProjection:
    transformation: LinearTransformation
    chosen: TransformationParams
    diagnostics: OptimizationDiagnostics


class _GroupEvaluator:
    """Scores all candidates sharing one initial transformation on one validation row.

    Candidates are nested: neighbourhoods for increasing alpha are prefixes
    of one distance ordering, and SIMPLS components for a smaller count are
    a prefix of those for a larger count. Running cross-product sums over the
    ordering and one batched projection per row cover the whole group.
    """

    def __init__(self, table: SimulationTable, f1: LinearTransformation, members: list[int], grid, n_post: int):
        self.table = table
        self.f1 = f1
        self.members = members
        self.grid = grid
        self.n_post = n_post
        self.method = grid[members[0]].method
        n = table.n_sims
        self.sizes = sorted({neighborhood_size(grid[l].alpha, n) for l in members})
        self.components: dict[int, int] = defaultdict(int)
        for l in members:
            m = neighborhood_size(grid[l].alpha, n)
            self.components[m] = max(self.components[m], grid[l].local_components or 0)
        self.needs_order = any(m < n for m in self.sizes)
        self.f1_projected = f1.apply(table.summaries) if self.needs_order else None
        self._full_cache: tuple[np.ndarray, np.ndarray] | None = None

    def _weights(self, cp: CrossProducts, m: int) -> np.ndarray:
        if self.method == "regression":
            _, beta = _ols_coefficients(cp)
            return beta
        R, _ = _simpls(cp, self.components[m])
        return R

    def _full_weights(self) -> tuple[np.ndarray, np.ndarray]:
        # the whole-table fit does not depend on the validation row
        if self._full_cache is None:
            cp = CrossProducts.from_data(self.table.summaries, self.table.params)
            W = self._weights(cp, self.table.n_sims)
            self._full_cache = (W, W.T @ self.table.summaries.T)
        return self._full_cache

    def evaluate(self, i: int) -> dict[int, tuple[float, np.ndarray]]:
        table = self.table
        S, theta = table.summaries, table.params
        n = table.n_sims
        weights: dict[int, np.ndarray] = {}
        if self.needs_order:
            order = _neighborhood_order(self.f1, self.f1_projected, S[i])
            sums = _RunningSums(S[i].copy(), theta[order[0]].copy())
            done = 0
            for m in self.sizes:
                if m == n:
                    continue
                block = order[done:m]
                sums.add(S[block], theta[block])
                done = m
                weights[m] = self._weights(sums.snapshot(), m)
        partial = [m for m in self.sizes if m < n]
        # projections are held transposed (components x rows) so that the
        # running sum over component prefixes adds contiguous rows
        projections: dict[int, np.ndarray] = {}
        if partial:
            stacked = np.hstack([weights[m] for m in partial])
            PT = stacked.T @ S.T
            start = 0
            for m in partial:
                width = weights[m].shape[1]
                projections[m] = PT[start : start + width]
                start += width
        if n in self.sizes:
            projections[n] = self._full_weights()[1]

        out: dict[int, tuple[float, np.ndarray]] = {}
        for m, PT in projections.items():
            sq = PT - PT[:, i : i + 1]
            np.multiply(sq, sq, out=sq)
            if self.method == "pls":
                for r in range(1, sq.shape[0]):
                    sq[r] += sq[r - 1]
            else:
                sq = sq.sum(axis=0, keepdims=True)
            for l in self.members:
                lam = self.grid[l]
                if neighborhood_size(lam.alpha, n) != m:
                    continue
                # squared distances give the same ordering as distances
                dist = sq[lam.local_components - 1 if self.method == "pls" else 0].copy()
                dist[i] = np.inf
                idx = select_k_nearest(dist, self.n_post)
                out[l] = (_srmse_rows(theta[idx], theta[i]), idx)
        return out


def local_projection_optimized(
    fv: LinearTransformation,
    f1_factory: Callable[[TransformationParams], LinearTransformation],
    grid: Sequence[TransformationParams],
    cfg: OptimizationConfig,
    s_obs,
    table: SimulationTable,
    keep_samples: bool = False,
) -> OptimizedProjection:
    """Choose the candidate whose local fits give the best validation posteriors.

    The ``cfg.n_valid`` simulations nearest ``s_obs`` under ``fv`` stand in for
    the observed data. For each candidate and each of them a local
    transformation is fitted around that simulation, ``cfg.n_post`` other
    simulations are accepted, and SRMSE against the simulation's own
    parameters is summed. The final transformation is the local fit around
    ``s_obs`` with the lowest total (first in grid order on ties).
    """
    grid = tuple(grid)
    if not grid:
        raise ValueError("candidate grid is empty")
    if len(set(grid)) != len(grid):
        raise ValueError("candidate grid contains duplicates")
    n, q = table.n_sims, table.n_summaries
    if cfg.n_valid + cfg.n_post > n:
        raise ValueError(f"n_valid + n_post = {cfg.n_valid + cfg.n_post} exceeds the table size {n}")

    skipped: dict[int, str] = {}
    for l, lam in enumerate(grid):
        if lam.method == "pls" and lam.local_components is None:
            raise ValueError("PLS candidates in a search grid need explicit local_components")
        try:
            _check_feasible(lam, n, q)
        except TooFewSamplesError as exc:
            skipped[l] = str(exc)
            log.info("skipping candidate %d (%s): %s", l, lam, exc)
    feasible = [l for l in range(len(grid)) if l not in skipped]
    if not feasible:
        raise TooFewSamplesError("no candidate in the grid is feasible for this table")

    projected_v = fv.apply(table.summaries)
    valid = select_k_nearest(distances_to(projected_v, fv.apply(s_obs)), cfg.n_valid)

    f1s: dict[int, LinearTransformation] = {}
    groups: dict[tuple[int, str], list[int]] = defaultdict(list)
    for l in feasible:
        f1 = f1_factory(grid[l])
        f1s[id(f1)] = f1
        groups[(id(f1), grid[l].method)].append(l)
    evaluators = [_GroupEvaluator(table, f1s[key[0]], members, grid, cfg.n_post) for key, members in groups.items()]

    scores = np.full((len(grid), cfg.n_valid), np.nan)
    samples: dict[tuple[int, int], np.ndarray] | None = {} if keep_samples else None
    leaks = 0
    for j, i in enumerate(valid):
        for ev in evaluators:
            for l, (value, idx) in ev.evaluate(int(i)).items():
                if np.any(idx == i):
                    leaks += 1
                scores[l, j] = value
                if samples is not None:
                    samples[(l, j)] = idx

    totals = np.where(np.isnan(scores).any(axis=1), np.inf, np.nansum(scores, axis=1))
    best = int(np.argmin(totals))
    chosen = grid[best]
    diagnostics = OptimizationDiagnostics(grid, valid, scores, best, skipped, leaks, samples)
    f1 = f1_factory(chosen)
    final = local_projection(f1, chosen, s_obs, table)
    final.meta["validation_srmse"] = float(totals[best])
    return OptimizedProjection(final, chosen, diagnostics)
