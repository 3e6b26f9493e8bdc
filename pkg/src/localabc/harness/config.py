"""Experiment configuration and its flat ``key = value`` file format.

Blank lines and lines starting with ``#`` are ignored. Lists are comma
separated; an empty value means "unset" for optional keys. The prior is
written as ``lo:hi`` pairs separated by semicolons, in the model's sampling
space (for the Ricker model the second component is log(sigma_e)).
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..inference import DEFAULT_COMPONENT_GRID, DEFAULT_LOG10_ALPHAS, OptimizationConfig
from ..simulators import PriorSpec
from .models import summary_widths

METHOD_NAMES = ("Reg", "localReg", "localRegopt", "PLS", "PLSopt", "localPLS", "localPLSopt")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "gk"
    n_sims: int = 25000
    n_test: int = 20
    methods: tuple[str, ...] = METHOD_NAMES
    seed: int = 1
    prior: PriorSpec | None = None
    log10_alpha_grid: tuple[float, ...] = DEFAULT_LOG10_ALPHAS
    pls_components_grid: tuple[int, ...] = DEFAULT_COMPONENT_GRID
    pls_opt_components: tuple[int, ...] = tuple(range(1, 16))
    local_alpha: float | None = None
    max_components: int = 15
    cv_folds: int = 10
    cv_threshold: float = 0.01
    n_valid: int = 20
    n_post: int = 200
    n_final: int = 100
    n_quantiles: int = 200
    n_obs: int = 10000
    gk_c: float = 0.8
    gk_sampler: str = "order_stats"
    gk_test_theta: tuple[float, ...] = (3.0, 1.0, 2.0, 0.5)
    ricker_steps: int = 100
    ricker_burn_in: int = 50
    ricker_test_log_r: float = 3.8
    ricker_test_phi: float = 10.0
    toy_noise_sd: float = 1.0
    sweep_n_sims: tuple[int, ...] = ()
    sweep_n_quantiles: tuple[int, ...] = ()
    table_path: str | None = None
    test_path: str | None = None

    def __post_init__(self) -> None:
        if self.model not in ("ricker", "gk", "toy"):
            raise ConfigError(f"model must be ricker, gk or toy, got {self.model!r}")
        counts = ("n_sims", "n_test", "n_valid", "n_post", "n_final", "n_quantiles", "n_obs", "max_components", "cv_folds")
        for name in counts:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.methods:
            raise ConfigError("methods must not be empty")
        unknown = [m for m in self.methods if m not in METHOD_NAMES]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; choose from {list(METHOD_NAMES)}")
        if not self.log10_alpha_grid or any(a > 0 for a in self.log10_alpha_grid):
            raise ConfigError("log10_alpha_grid must be non-empty with values <= 0")
        if self.local_alpha is not None and not 0 < self.local_alpha <= 1:
            raise ConfigError("local_alpha must be in (0, 1]")
        if self.gk_sampler not in ("order_stats", "direct"):
            raise ConfigError("gk_sampler must be order_stats or direct")
        if len(self.gk_test_theta) != 4:
            raise ConfigError("gk_test_theta needs four values")

    @property
    def opt(self) -> OptimizationConfig:
        return OptimizationConfig(self.n_valid, self.n_post, self.n_final)

    def sweep(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        n_sims = self.sweep_n_sims or (self.n_sims,)
        return tuple(sorted(set(n_sims))), tuple(summary_widths(self))


def _tuple_of(conv):
    def parse(s: str):
        s = s.strip()
        return tuple(conv(x.strip()) for x in s.split(",") if x.strip()) if s else ()

    return parse


def _optional(conv):
    def parse(s: str):
        return None if not s.strip() else conv(s.strip())

    return parse


def _parse_prior(s: str) -> PriorSpec:
    ranges = []
    for part in s.split(";"):
        if not part.strip():
            continue
        lo, sep, hi = part.partition(":")
        if not sep:
            raise ConfigError(f"prior range {part!r} must look like lo:hi")
        ranges.append((float(lo), float(hi)))
    return PriorSpec(tuple(ranges))


def _fmt_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, PriorSpec):
        return "; ".join(f"{lo!r}:{hi!r}" for lo, hi in value.ranges)
    if isinstance(value, tuple):
        return ", ".join(_fmt_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_PARSERS = {
    "model": str,
    "n_sims": int,
    "n_test": int,
    "methods": _tuple_of(str),
    "seed": int,
    "prior": _optional(_parse_prior),
    "log10_alpha_grid": _tuple_of(float),
    "pls_components_grid": _tuple_of(int),
    "pls_opt_components": _tuple_of(int),
    "local_alpha": _optional(float),
    "max_components": int,
    "cv_folds": int,
    "cv_threshold": float,
    "n_valid": int,
    "n_post": int,
    "n_final": int,
    "n_quantiles": int,
    "n_obs": int,
    "gk_c": float,
    "gk_sampler": str,
    "gk_test_theta": _tuple_of(float),
    "ricker_steps": int,
    "ricker_burn_in": int,
    "ricker_test_log_r": float,
    "ricker_test_phi": float,
    "toy_noise_sd": float,
    "sweep_n_sims": _tuple_of(int),
    "sweep_n_quantiles": _tuple_of(int),
    "table_path": _optional(str),
    "test_path": _optional(str),
}
assert set(_PARSERS) == {f.name for f in fields(ExperimentConfig)}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value.strip())
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    try:
        return ExperimentConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def serialize_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name} = {_fmt_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def load_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config(path.read_text(), str(path))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg))
