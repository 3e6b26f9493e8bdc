"""Rejection ABC with locally fitted projection summaries."""

from .core import SimulationTable, load_table, rng_stream, save_table
from .inference import (
    OptimizationConfig,
    TransformationParams,
    local_projection,
    local_projection_optimized,
    rejection_abc,
    rmse,
    srmse,
)
from .projections import LinearTransformation, fit_ols, fit_pls, select_pls_components
from .summaries import fit_preprocessor

__version__ = "0.1.0"

__all__ = [
    "LinearTransformation",
    "OptimizationConfig",
    "SimulationTable",
    "TransformationParams",
    "fit_ols",
    "fit_pls",
    "fit_preprocessor",
    "load_table",
    "local_projection",
    "local_projection_optimized",
    "rejection_abc",
    "rmse",
    "rng_stream",
    "save_table",
    "select_pls_components",
    "srmse",
]
