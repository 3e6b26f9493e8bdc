"""Candidate summary statistics and the sqrt + standardisation preprocessing."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, SimulationTable

__all__ = [
    "OutOfSupportWarning",
    "UnusableTableError",
    "autocovariance",
    "autocorrelation",
    "ricker_summaries",
    "ricker_summaries_batch",
    "ricker_summary_names",
    "quantile_ranks",
    "gk_summaries",
    "Preprocessor",
    "fit_preprocessor",
    "apply_preprocessor",
]

RICKER_LENGTH = 50
MAX_LAG = 5


class OutOfSupportWarning(UserWarning):
    """A value fell outside the support the preprocessor was fitted on."""


class UnusableTableError(ValueError):
    """Every summary column has zero variance."""


def autocovariance(series, lag: int) -> float:
    """Sample autocovariance with divisor n."""
    y = np.asarray(series, dtype=np.float64).ravel()
    n = y.size
    if not 0 <= lag < n:
        raise ValueError(f"lag must be in [0, {n}), got {lag}")
    dev = y - y.mean()
    return float(np.dot(dev[: n - lag], dev[lag:]) / n)


def autocorrelation(series, lag: int) -> float:
    """``autocovariance(lag) / autocovariance(0)``, or 0 for a constant series."""
    c0 = autocovariance(series, 0)
    if c0 == 0:
        return 0.0
    return autocovariance(series, lag) / c0


def ricker_summary_names(length: int = RICKER_LENGTH) -> list[str]:
    names = [f"acov_{lag}" for lag in range(1, MAX_LAG + 1)]
    names += [f"acor_{lag}" for lag in range(1, MAX_LAG + 1)]
    names += ["mean", "var"]
    names += [f"count_eq_{k}" for k in range(5)]
    names += [f"log1p_sum_pow_{i}" for i in range(2, 7)]
    names += ["log1p_mean", "log1p_var"]
    names += [f"y_t{t + 1}" for t in range(length)]
    names += [f"y_sorted_{t + 1}" for t in range(length)]
    return names


def ricker_summaries_batch(y: np.ndarray) -> np.ndarray:
    """Ricker candidate summaries for each row of ``y`` (shape ``(m, 50)``).

    Column order: autocovariances lags 1-5, autocorrelations lags 1-5, mean,
    variance (divisor n), counts of y == 0..4, log(1 + sum y^i) for i = 2..6,
    log(1 + mean), log(1 + variance), the series in time order, the series
    sorted ascending. 124 columns for length-50 series.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != RICKER_LENGTH:
        raise DimensionError(f"expected series of length {RICKER_LENGTH}, got shape {y.shape}")
    n = y.shape[1]
    mean = y.mean(axis=1)
    dev = y - mean[:, None]
    var = np.einsum("ij,ij->i", dev, dev) / n
    acov = np.stack([np.einsum("ij,ij->i", dev[:, : n - lag], dev[:, lag:]) / n for lag in range(1, MAX_LAG + 1)], axis=1)
    safe = np.where(var > 0, var, 1.0)
    acor = np.where(var[:, None] > 0, acov / safe[:, None], 0.0)
    counts = np.stack([(y == k).sum(axis=1) for k in range(5)], axis=1).astype(np.float64)
    log_pow = np.stack([np.log1p((y**i).sum(axis=1)) for i in range(2, 7)], axis=1)
    logs = np.stack([np.log1p(mean), np.log1p(var)], axis=1)
    return np.hstack([acov, acor, mean[:, None], var[:, None], counts, log_pow, logs, y, np.sort(y, axis=1)])


def ricker_summaries(dataset) -> np.ndarray:
    y = np.asarray(dataset, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionError("a single Ricker dataset must be 1-D")
    return ricker_summaries_batch(y[None, :])[0]


def _round_half_up(x):
    return np.floor(np.asarray(x) + 0.5).astype(np.int64)


def quantile_ranks(n: int, n_quantiles: int) -> np.ndarray:
    """1-based ranks ``clamp(round((j - 0.5) n / n_quantiles), 1, n)``, j = 1..n_quantiles."""
    if n_quantiles < 1:
        raise ValueError("n_quantiles must be at least 1")
    if n < n_quantiles:
        raise ValueError(f"need at least {n_quantiles} observations, got {n}")
    j = np.arange(1, n_quantiles + 1)
    # (2j - 1) n / (2 nq) in integer arithmetic avoids a 0.5-boundary rounding wobble
    num = (2 * j - 1) * n
    den = 2 * n_quantiles
    ranks = (2 * num + den) // (2 * den)
    return np.clip(ranks, 1, n)


def gk_summaries(dataset, n_quantiles: int) -> np.ndarray:
    """Evenly spaced order statistics of the sample."""
    x = np.sort(np.asarray(dataset, dtype=np.float64).ravel())
    ranks = quantile_ranks(x.size, n_quantiles)
    return x[ranks - 1]


# --- preprocessing ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Preprocessor:
    """Fitted sqrt + standardisation map from raw summaries to model inputs.

    ``means`` and ``sds`` have length q (raw width); entries of dropped
    columns are kept but never used.
    """

    sqrt_mask: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    dropped: tuple[int, ...]

    def __post_init__(self) -> None:
        q = self.sqrt_mask.size
        if self.means.size != q or self.sds.size != q:
            raise DimensionError("mask, means and sds must have the same length")
        for arr in (self.sqrt_mask, self.means, self.sds):
            arr.flags.writeable = False

    @property
    def n_raw(self) -> int:
        return self.sqrt_mask.size

    @property
    def retained(self) -> np.ndarray:
        keep = np.ones(self.n_raw, dtype=bool)
        keep[list(self.dropped)] = False
        return np.flatnonzero(keep)

    @property
    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for arr in (self.sqrt_mask.astype(np.uint8), self.means, self.sds, np.asarray(self.dropped, dtype=np.int64)):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]

    def transform(self, s, return_flags: bool = False):
        """Apply to one vector (shape ``(q,)``) or a batch (shape ``(m, q)``).

        Negative values in square-rooted columns can only come from data the
        preprocessor was not fitted on; they are standardised without the
        root and reported through :class:`OutOfSupportWarning` (and the flag
        array when ``return_flags`` is set).
        """
        arr = np.asarray(s, dtype=np.float64)
        single = arr.ndim == 1
        arr = np.atleast_2d(arr)
        if arr.shape[1] != self.n_raw:
            raise DimensionError(f"expected {self.n_raw} raw summaries, got {arr.shape[1]}")
        out = arr.copy()
        mask = np.broadcast_to(self.sqrt_mask, arr.shape)
        flags = mask & (arr < 0)
        rootable = mask & ~flags
        out[rootable] = np.sqrt(arr[rootable])
        out = (out - self.means) / self.sds
        keep = self.retained
        out = out[:, keep]
        flags = flags[:, keep]
        if flags.any():
            warnings.warn(
                f"{int(flags.sum())} negative value(s) in square-rooted columns passed through un-rooted",
                OutOfSupportWarning,
                stacklevel=2,
            )
        if single:
            out, flags = out[0], flags[0]
        return (out, flags) if return_flags else out

    def apply_table(self, table: SimulationTable) -> SimulationTable:
        names = np.asarray(table.summary_names)[self.retained]
        meta = dict(table.meta, summary_names=",".join(names), preprocessor=self.fingerprint)
        return SimulationTable(table.params, self.transform(table.summaries), meta)


def fit_preprocessor(table: SimulationTable, zero_tol: float = 1e-12) -> Preprocessor:
    """Fit the preprocessing on a table of raw candidate summaries.

    Columns that are non-negative in every simulation are square-rooted, then
    every column is centred and scaled by its sample standard deviation
    (ddof=1). Columns whose standard deviation is below ``zero_tol`` times
    their magnitude are dropped.
    """
    S = np.asarray(table.summaries, dtype=np.float64)
    if S.shape[0] < 2:
        raise ValueError("need at least two simulations to fit a preprocessor")
    if not np.all(np.isfinite(S)):
        raise ValueError("raw summaries must be finite")
    sqrt_mask = np.all(S >= 0, axis=0)
    work = np.where(sqrt_mask, np.sqrt(np.where(sqrt_mask, S, 0.0)), S)
    means = work.mean(axis=0)
    sds = work.std(axis=0, ddof=1)
    scale = np.maximum(1.0, np.abs(work).max(axis=0))
    zero = sds <= zero_tol * scale
    if zero.all():
        raise UnusableTableError("every summary column has zero variance")
    sds = np.where(zero, 1.0, sds)
    return Preprocessor(sqrt_mask, means, sds, tuple(int(j) for j in np.flatnonzero(zero)))


def apply_preprocessor(prep: Preprocessor, s, return_flags: bool = False):
    return prep.transform(s, return_flags=return_flags)
