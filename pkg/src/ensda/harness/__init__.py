"""Experiment configs, replicated runs, and the command-line interface."""

from .config import (
    ExperimentConfig,
    config_hash,
    load_config,
    paper_scale,
    preset,
    preset_names,
    save_config,
)
from .run import (
    build_truth,
    read_field_csv,
    read_metrics_csv,
    resolve_out_dir,
    run_experiment,
)

__all__ = [
    "ExperimentConfig",
    "build_truth",
    "config_hash",
    "load_config",
    "paper_scale",
    "preset",
    "preset_names",
    "read_field_csv",
    "read_metrics_csv",
    "resolve_out_dir",
    "run_experiment",
    "save_config",
]
