"""Experiment harness: YAML-configured sweeps, rate fits and flat-file reports."""

from pretrain_lab.bench.config import ConfigError, ExperimentConfig, load_config
from pretrain_lab.bench.report import emit_report, fit_rate, read_results
from pretrain_lab.bench.sweep import SweepResult, run_sweep

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "SweepResult",
    "emit_report",
    "fit_rate",
    "load_config",
    "read_results",
    "run_sweep",
]
