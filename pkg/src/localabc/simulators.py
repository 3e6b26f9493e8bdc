"""Generative models: Ricker map, g-and-k distribution, a 1-D toy model, priors."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

__all__ = [
    "SimulationError",
    "PriorSpec",
    "RickerParams",
    "GkParams",
    "standard_normal_quantile",
    "gk_quantile",
    "simulate_gk",
    "sample_gk_order_statistics",
    "simulate_ricker",
    "simulate_ricker_batch",
    "simulate_toy",
    "toy_mean",
    "sample_prior",
]

GK_C = 0.8


class SimulationError(RuntimeError):
    """A simulator produced non-finite output."""


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform priors, one ``(lo, hi)`` range per component."""

    ranges: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        ranges = tuple((float(lo), float(hi)) for lo, hi in self.ranges)
        if not ranges:
            raise ValueError("a prior needs at least one component")
        for j, (lo, hi) in enumerate(ranges):
            if not (math.isfinite(lo) and math.isfinite(hi)):
                raise ValueError(f"prior range {j} is not finite")
            if not lo < hi:
                raise ValueError(f"prior range {j} must satisfy lo < hi, got ({lo}, {hi})")
        object.__setattr__(self, "ranges", ranges)

    @property
    def dim(self) -> int:
        return len(self.ranges)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.ranges])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.ranges])


def sample_prior(spec: PriorSpec, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One draw (shape ``(d,)``) or ``size`` draws (shape ``(size, d)``)."""
    shape = (spec.dim,) if size is None else (size, spec.dim)
    u = rng.random(shape)
    return spec.lower + (spec.upper - spec.lower) * u


# --- g-and-k ---------------------------------------------------------------


@dataclass(frozen=True)
class GkParams:
    A: float
    B: float
    g: float
    k: float
    c: float = GK_C

    def __post_init__(self) -> None:
        vals = (self.A, self.B, self.g, self.k, self.c)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("g-and-k parameters must be finite")
        if self.B <= 0:
            raise ValueError(f"B must be positive, got {self.B}")
        if self.k <= -0.5:
            raise ValueError(f"k must exceed -1/2, got {self.k}")

    @classmethod
    def from_vector(cls, theta: Sequence[float], c: float = GK_C) -> "GkParams":
        A, B, g, k = (float(v) for v in theta)
        return cls(A, B, g, k, c)


def standard_normal_quantile(x):
    """Inverse of the standard normal CDF; raises outside the open interval (0, 1)."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~((arr > 0) & (arr < 1))):
        raise ValueError("probability must lie strictly between 0 and 1")
    z = special.ndtri(arr)
    return float(z) if np.ndim(z) == 0 else z


def _gk_transform(z, A, B, g, k, c):
    # (1 - e^{-gz}) / (1 + e^{-gz}) == tanh(gz/2), which cannot overflow
    return A + B * (1.0 + c * np.tanh(0.5 * g * z)) * (1.0 + z * z) ** k * z


def gk_quantile(x, params: GkParams):
    z = standard_normal_quantile(x)
    q = _gk_transform(np.asarray(z), params.A, params.B, params.g, params.k, params.c)
    return float(q) if np.ndim(q) == 0 else q


def simulate_gk(params: GkParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. draws by inversion of uniform variates."""
    if n < 1:
        raise ValueError("n must be at least 1")
    u = rng.random(n)
    # rng.random can return exactly 0.0
    while np.any(u == 0.0):
        zero = u == 0.0
        u[zero] = rng.random(int(zero.sum()))
    return _gk_transform(special.ndtri(u), params.A, params.B, params.g, params.k, params.c)


def sample_gk_order_statistics(
    theta: np.ndarray, n: int, ranks: Sequence[int], rng: np.random.Generator, c: float = GK_C
) -> np.ndarray:
    """Order statistics of g-and-k samples of size ``n`` at the given 1-based ranks.

    One row per parameter vector in ``theta`` (shape ``(m, 4)``). Uniform order
    statistics are drawn jointly through gamma spacings,
    ``U_(r) = G_r / G_{n+1}`` with ``G`` the partial sums of ``n + 1`` unit
    exponentials, and pushed through the quantile function. Because the
    quantile function is increasing this has exactly the distribution of
    sorting ``n`` draws from :func:`simulate_gk` and reading off the ranks,
    at a cost independent of ``n``.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    ranks = np.asarray(ranks, dtype=np.int64)
    if ranks.ndim != 1 or ranks.size == 0:
        raise ValueError("ranks must be a non-empty 1-D sequence")
    if np.any(np.diff(ranks) <= 0) or ranks[0] < 1 or ranks[-1] > n:
        raise ValueError("ranks must be strictly increasing within [1, n]")
    m = theta.shape[0]
    shapes = np.diff(np.concatenate([[0], ranks, [n + 1]])).astype(np.float64)
    gaps = rng.standard_gamma(shapes, size=(m, shapes.size))
    partial = np.cumsum(gaps, axis=1)
    u = partial[:, :-1] / partial[:, -1:]
    z = special.ndtri(u)
    A, B, g, k = (theta[:, j : j + 1] for j in range(4))
    return _gk_transform(z, A, B, g, k, c)


# --- Ricker map ------------------------------------------------------------


@dataclass(frozen=True)
class RickerParams:
    log_r: float
    sigma_e: float
    phi: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (self.log_r, self.sigma_e, self.phi)):
            raise ValueError("Ricker parameters must be finite")
        if self.sigma_e < 0:
            raise ValueError(f"sigma_e must be non-negative, got {self.sigma_e}")
        if self.phi < 0:
            raise ValueError(f"phi must be non-negative, got {self.phi}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.log_r, self.sigma_e, self.phi])


def simulate_ricker_batch(
    theta: np.ndarray,
    rng: np.random.Generator,
    steps: int = 100,
    burn_in: int = 50,
    n0: float = 1.0,
    return_latent: bool = False,
):
    """Simulate many Ricker series at once.

    ``theta`` rows are ``(log r, sigma_e, phi)``. The latent recursion
    ``N_{t+1} = r N_t exp(-N_t + e_t)`` runs for ``steps`` steps from ``N_0 =
    n0`` and Poisson(phi N_t) counts are returned for steps
    ``burn_in + 1 .. steps``, shape ``(m, steps - burn_in)``.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    if not steps > burn_in >= 0:
        raise ValueError("need steps > burn_in >= 0")
    if np.any(theta[:, 1] < 0) or np.any(theta[:, 2] < 0):
        raise ValueError("sigma_e and phi must be non-negative")
    m = theta.shape[0]
    log_r, sigma, phi = theta[:, 0], theta[:, 1], theta[:, 2]
    noise = rng.standard_normal((m, steps)) * sigma[:, None]
    latent = np.empty((m, steps + 1))
    latent[:, 0] = n0
    pop = latent[:, 0].copy()
    for t in range(steps):
        # r * N * exp(-N + e) written so that r is never formed explicitly
        pop = pop * np.exp(log_r - pop + noise[:, t])
        latent[:, t + 1] = pop
    observed = latent[:, burn_in + 1 :]
    bad = ~np.isfinite(observed).all(axis=1)
    if bad.any():
        raise SimulationError(
            f"latent population overflowed in {int(bad.sum())} simulation(s)", np.flatnonzero(bad)
        )
    counts = rng.poisson(phi[:, None] * observed).astype(np.float64)
    if return_latent:
        return counts, latent
    return counts


def simulate_ricker(
    params: RickerParams,
    rng: np.random.Generator,
    steps: int = 100,
    burn_in: int = 50,
    n0: float = 1.0,
    return_latent: bool = False,
):
    out = simulate_ricker_batch(params.as_vector(), rng, steps, burn_in, n0, return_latent)
    if return_latent:
        return out[0][0], out[1][0]
    return out[0]


# --- toy model -------------------------------------------------------------

TOY_QUADRATIC = 0.05


def toy_mean(theta):
    """Noise-free toy summary: theta + 0.05 theta^2."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta + TOY_QUADRATIC * theta * theta


def simulate_toy(theta, noise_sd: float, rng: np.random.Generator):
    """Toy summary ``h(theta) + eps`` with ``eps ~ N(0, noise_sd^2)``; vectorised over theta."""
    if not noise_sd > 0:
        raise ValueError("noise_sd must be positive")
    mean = toy_mean(theta)
    out = mean + noise_sd * rng.standard_normal(np.shape(mean))
    return float(out) if np.ndim(out) == 0 else out
