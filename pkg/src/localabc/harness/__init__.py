"""Experiment harness: configs, table generation, method comparison and reports."""

from .config import METHOD_NAMES, ConfigError, ExperimentConfig, load_config, parse_config, save_config, serialize_config
from .experiment import ExperimentReport, ReportRow, run_experiment
from .report import emit_plot_data

__all__ = [
    "METHOD_NAMES",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "ReportRow",
    "emit_plot_data",
    "load_config",
    "parse_config",
    "run_experiment",
    "save_config",
    "serialize_config",
]
