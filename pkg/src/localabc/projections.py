"""Projection fits: least-squares predictions and SIMPLS partial least squares scores.

Both fits work from centred cross-product matrices, so a fit on ``m`` rows
costs one ``m x q x q`` product and everything after that is ``O(q^2)``. This
is what lets the validation search reuse accumulated sums across nested
neighbourhoods.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg

from .core import DimensionError

__all__ = [
    "MIN_FIT_SIZE",
    "TooFewSamplesError",
    "CrossProducts",
    "LinearTransformation",
    "identity_transformation",
    "fit_ols",
    "fit_pls",
    "pls_cv_mse",
    "select_pls_components",
    "apply_transformation",
]

MIN_FIT_SIZE = 10
OLS_RCOND = 1e-10


class TooFewSamplesError(ValueError):
    """Not enough rows to fit a transformation."""


@dataclass(frozen=True)
class CrossProducts:
    """Centred second moments of a set of rows: sum of outer products about the mean."""

    n: int
    x_mean: np.ndarray
    y_mean: np.ndarray
    xx: np.ndarray
    xy: np.ndarray

    @classmethod
    def from_data(cls, X, Y) -> "CrossProducts":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise DimensionError(f"incompatible shapes {X.shape} and {Y.shape}")
        xm = X.mean(axis=0)
        ym = Y.mean(axis=0)
        Xc = X - xm
        return cls(X.shape[0], xm, ym, Xc.T @ Xc, Xc.T @ (Y - ym))

    @classmethod
    def from_sums(cls, n, shift_x, shift_y, sx, sy, sxx, sxy) -> "CrossProducts":
        """Build from raw sums of ``x - shift_x`` and ``y - shift_y``.

        Shifting by a point near the rows keeps the subtraction of the mean
        outer product well conditioned.
        """
        mx = sx / n
        my = sy / n
        return cls(n, shift_x + mx, shift_y + my, sxx - n * np.outer(mx, mx), sxy - n * np.outer(mx, my))


class _RunningSums:
    """Accumulates shifted raw sums over successive blocks of rows."""

    def __init__(self, shift_x: np.ndarray, shift_y: np.ndarray):
        q, d = shift_x.size, shift_y.size
        self.shift_x, self.shift_y = shift_x, shift_y
        self.n = 0
        self.sx = np.zeros(q)
        self.sy = np.zeros(d)
        self.sxx = np.zeros((q, q))
        self.sxy = np.zeros((q, d))

    def add(self, X: np.ndarray, Y: np.ndarray) -> None:
        if X.shape[0] == 0:
            return
        Xs = X - self.shift_x
        Ys = Y - self.shift_y
        self.n += X.shape[0]
        self.sx += Xs.sum(axis=0)
        self.sy += Ys.sum(axis=0)
        self.sxx += Xs.T @ Xs
        self.sxy += Xs.T @ Ys

    def snapshot(self) -> CrossProducts:
        return CrossProducts.from_sums(self.n, self.shift_x, self.shift_y, self.sx, self.sy, self.sxx, self.sxy)


@dataclass(frozen=True, eq=False)
class LinearTransformation:
    """Fitted map from preprocessed summaries to projected summaries.

    ``regression``: ``intercept + s @ weights`` (predicted parameters).
    ``pls``: ``(s - center) @ weights`` (SIMPLS scores); ``y_loadings`` and
    ``y_mean`` are kept so the fit can also predict parameters.
    ``identity``: ``s`` unchanged.
    """

    kind: str
    n_inputs: int
    weights: np.ndarray | None = None
    intercept: np.ndarray | None = None
    center: np.ndarray | None = None
    n_components: int | None = None
    y_loadings: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    fit_indices: np.ndarray | None = None
    preproc_ref: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ("identity", "regression", "pls"):
            raise ValueError(f"unknown transformation kind {self.kind!r}")
        if self.kind == "identity":
            return
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != self.n_inputs:
            raise DimensionError(f"weights must have {self.n_inputs} rows, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.kind == "pls":
            if self.n_components is None or self.n_components < 1:
                raise ValueError("a PLS transformation needs at least one component")
            if w.shape[1] != self.n_components:
                raise DimensionError("PLS weights must have one column per component")
            if self.center is None or np.asarray(self.center).size != self.n_inputs:
                raise DimensionError("PLS center must match the input width")
        if self.kind == "regression":
            if self.intercept is None or np.asarray(self.intercept).size != w.shape[1]:
                raise DimensionError("regression intercept must match the output width")

    @property
    def output_dim(self) -> int:
        if self.kind == "identity":
            return self.n_inputs
        return self.weights.shape[1]

    def apply(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != self.n_inputs:
            raise DimensionError(f"expected {self.n_inputs} summaries, got {s.shape[-1]}")
        if self.kind == "identity":
            return s.copy()
        if self.kind == "regression":
            return self.intercept + s @ self.weights
        return (s - self.center) @ self.weights

    def predict(self, s) -> np.ndarray:
        """Parameter predictions (regression output, or PLS regression on its scores)."""
        if self.kind == "regression":
            return self.apply(s)
        if self.kind == "pls":
            return self.y_mean + self.apply(s) @ self.y_loadings.T
        raise TypeError("an identity transformation does not predict parameters")

    def truncate(self, n_components: int) -> "LinearTransformation":
        """The same SIMPLS fit restricted to its first ``n_components`` components."""
        if self.kind != "pls":
            raise TypeError("only PLS transformations can be truncated")
        if not 1 <= n_components <= self.n_components:
            raise ValueError(f"n_components must be in [1, {self.n_components}]")
        return replace(
            self,
            weights=self.weights[:, :n_components],
            y_loadings=self.y_loadings[:, :n_components],
            n_components=n_components,
            meta=dict(self.meta),
        )

    # --- audit bundle ------------------------------------------------------

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "kind": self.kind,
            "n_inputs": self.n_inputs,
            "output_dim": self.output_dim,
            "n_components": self.n_components,
            "weights": arr(self.weights),
            "intercept": arr(self.intercept),
            "center": arr(self.center),
            "y_loadings": arr(self.y_loadings),
            "y_mean": arr(self.y_mean),
            "fit_indices": arr(self.fit_indices),
            "preproc_ref": self.preproc_ref,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearTransformation":
        def arr(key, dtype=np.float64):
            value = data.get(key)
            return None if value is None else np.asarray(value, dtype=dtype)

        return cls(
            kind=data["kind"],
            n_inputs=int(data["n_inputs"]),
            weights=arr("weights"),
            intercept=arr("intercept"),
            center=arr("center"),
            n_components=data.get("n_components"),
            y_loadings=arr("y_loadings"),
            y_mean=arr("y_mean"),
            fit_indices=arr("fit_indices", np.intp),
            preproc_ref=data.get("preproc_ref"),
            meta=dict(data.get("meta") or {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "LinearTransformation":
        return cls.from_dict(json.loads(Path(path).read_text()))


def identity_transformation(n_inputs: int, preproc_ref: str | None = None) -> LinearTransformation:
    return LinearTransformation("identity", n_inputs, preproc_ref=preproc_ref)


def apply_transformation(t: LinearTransformation, s) -> np.ndarray:
    return t.apply(s)


# --- least squares ---------------------------------------------------------


def _ols_coefficients(cp: CrossProducts, rcond: float = OLS_RCOND) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm slope solution of the centred normal equations, plus intercept."""
    w, V = linalg.eigh(cp.xx, check_finite=False)
    top = w[-1] if w.size else 0.0
    keep = w > rcond * top if top > 0 else np.zeros_like(w, dtype=bool)
    Vk = V[:, keep]
    beta = Vk @ ((Vk.T @ cp.xy) / w[keep][:, None])
    intercept = cp.y_mean - cp.x_mean @ beta
    return intercept, beta


def _check_design(S, theta) -> tuple[np.ndarray, np.ndarray]:
    S = np.asarray(S, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    if theta.ndim == 1:
        theta = theta[:, None]
    if S.ndim != 2 or theta.ndim != 2 or S.shape[0] != theta.shape[0]:
        raise DimensionError(f"incompatible shapes {S.shape} and {theta.shape}")
    return S, theta


def _ols_from_cp(cp: CrossProducts, n_inputs: int, **extra) -> LinearTransformation:
    intercept, beta = _ols_coefficients(cp)
    return LinearTransformation("regression", n_inputs, weights=beta, intercept=intercept, **extra)


def fit_ols(S, theta, fit_indices=None, preproc_ref: str | None = None) -> LinearTransformation:
    """Least-squares regression of ``theta`` on ``S`` with an intercept.

    Rank-deficient designs get the minimum-norm slope vector (eigenvalues of
    the centred cross-product matrix below ``1e-10`` of the largest are
    treated as zero).
    """
    S, theta = _check_design(S, theta)
    if S.shape[0] < 2:
        raise TooFewSamplesError(f"least squares needs at least 2 rows, got {S.shape[0]}")
    cp = CrossProducts.from_data(S, theta)
    return _ols_from_cp(cp, S.shape[1], fit_indices=fit_indices, preproc_ref=preproc_ref)


# --- SIMPLS ----------------------------------------------------------------


def _simpls(cp: CrossProducts, n_components: int) -> tuple[np.ndarray, np.ndarray]:
    """SIMPLS weights ``R`` (q x c) and y-loadings ``Q`` (d x c) from cross-products.

    Scores ``T = Xc @ R`` have unit norm and are mutually orthogonal. If the
    deflated covariance vanishes before ``n_components`` are found (the
    responses are already explained exactly) the remaining columns are left
    at zero.
    """
    q, d = cp.xy.shape
    R = np.zeros((q, n_components))
    Q = np.zeros((d, n_components))
    V = np.zeros((q, n_components))
    S = cp.xy.copy()
    s_scale = np.linalg.norm(S)
    x_scale = np.trace(cp.xx)
    if s_scale == 0 or x_scale <= 0:
        return R, Q
    for a in range(n_components):
        if d == 1:
            r = S[:, 0].copy()
        else:
            u, _, _ = np.linalg.svd(S, full_matrices=False)
            r = u[:, 0]
        r_norm = np.linalg.norm(r)
        if r_norm == 0:
            break
        r = r / r_norm
        p = cp.xx @ r
        t_norm2 = float(r @ p)
        if t_norm2 <= 1e-14 * x_scale:
            break
        t_norm = np.sqrt(t_norm2)
        r /= t_norm
        p /= t_norm
        v = p.copy()
        for _ in range(2):
            v -= V[:, :a] @ (V[:, :a].T @ v)
        v_norm = np.linalg.norm(v)
        if v_norm <= 1e-12 * np.linalg.norm(p):
            break
        v /= v_norm
        R[:, a] = r
        Q[:, a] = cp.xy.T @ r
        V[:, a] = v
        S -= np.outer(v, v @ S)
        if np.linalg.norm(S) <= 1e-12 * s_scale:
            break
    return R, Q


def _pls_from_cp(cp: CrossProducts, n_inputs: int, n_components: int, **extra) -> LinearTransformation:
    R, Q = _simpls(cp, n_components)
    return LinearTransformation(
        "pls",
        n_inputs,
        weights=R,
        center=cp.x_mean,
        n_components=n_components,
        y_loadings=Q,
        y_mean=cp.y_mean,
        **extra,
    )


def _max_components(n_rows: int, n_inputs: int) -> int:
    return min(n_rows - 1, n_inputs)


def fit_pls(S, theta, n_components: int, fit_indices=None, preproc_ref: str | None = None) -> LinearTransformation:
    """SIMPLS fit with ``n_components`` components; scores are the projected summaries."""
    S, theta = _check_design(S, theta)
    limit = _max_components(S.shape[0], S.shape[1])
    if not 1 <= n_components <= limit:
        raise ValueError(f"n_components must be in [1, {limit}] for a {S.shape[0]}x{S.shape[1]} design")
    cp = CrossProducts.from_data(S, theta)
    return _pls_from_cp(cp, S.shape[1], n_components, fit_indices=fit_indices, preproc_ref=preproc_ref)


# --- cross-validated component count ---------------------------------------


def _cv_folds(n: int, folds: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return np.array_split(perm, folds)


def pls_cv_mse(S, theta, max_components: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    """K-fold CV mean squared prediction error for 1..max_components components.

    Entry ``c - 1`` is the per-row squared error summed over parameter
    components and averaged over all rows. Folds are a seeded shuffle cut
    into contiguous blocks.
    """
    S, theta = _check_design(S, theta)
    n, q = S.shape
    if not 2 <= folds <= n:
        raise ValueError(f"folds must be in [2, {n}]")
    blocks = _cv_folds(n, folds, rng)
    shift_x = S.mean(axis=0)
    shift_y = theta.mean(axis=0)
    parts = []
    total = _RunningSums(shift_x, shift_y)
    for idx in blocks:
        part = _RunningSums(shift_x, shift_y)
        part.add(S[idx], theta[idx])
        parts.append(part)
        total.add(S[idx], theta[idx])
    smallest_train = n - max(len(b) for b in blocks)
    cap = min(max_components, _max_components(smallest_train, q))
    if cap < 1:
        raise TooFewSamplesError("folds leave too few training rows for one component")
    sse = np.zeros(cap)
    for idx, part in zip(blocks, parts):
        m = total.n - part.n
        cp = CrossProducts.from_sums(
            m, shift_x, shift_y, total.sx - part.sx, total.sy - part.sy, total.sxx - part.sxx, total.sxy - part.sxy
        )
        R, Q = _simpls(cp, cap)
        scores = (S[idx] - cp.x_mean) @ R
        pred = cp.y_mean[None, :, None] + np.cumsum(scores[:, None, :] * Q[None, :, :], axis=2)
        resid = theta[idx][:, :, None] - pred
        sse += np.einsum("ijc,ijc->c", resid, resid)
    return sse / n


def select_pls_components(
    S,
    theta,
    max_components: int = 15,
    folds: int = 10,
    threshold_frac: float = 0.01,
    rng: np.random.Generator | int | None = 0,
) -> int:
    """Smallest component count after which one more component gains too little.

    Returns the first ``c`` for which ``mse(c) - mse(c + 1)`` is below
    ``threshold_frac`` times the summed sample variance of ``theta``, capped at
    ``max_components`` (and at what the training folds can support).
    """
    S, theta = _check_design(S, theta)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    total_var = float(np.sum(theta.var(axis=0, ddof=1)))
    if total_var == 0:
        return 1
    mse = pls_cv_mse(S, theta, max_components, folds, rng)
    cap = mse.size
    for c in range(1, cap):
        if mse[c - 1] - mse[c] < threshold_frac * total_var:
            return c
    return cap
