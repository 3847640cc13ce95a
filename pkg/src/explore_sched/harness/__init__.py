"""Experiment harness: configuration, sweeps, reports and invariant checks."""

from .checks import run_checks
from .config import (
    DEFAULT_GRID,
    ExperimentConfig,
    config_from_mapping,
    config_to_mapping,
    dump_config,
    load_config,
)
from .reports import emit_reports, read_regret_table, read_schedules, same_value
from .sweep import CellResult, SweepResult, build_replication, env_cells, run_sweep, strategy_params

__all__ = [
    "DEFAULT_GRID",
    "CellResult",
    "ExperimentConfig",
    "SweepResult",
    "build_replication",
    "config_from_mapping",
    "config_to_mapping",
    "dump_config",
    "emit_reports",
    "env_cells",
    "load_config",
    "read_regret_table",
    "read_schedules",
    "run_checks",
    "run_sweep",
    "same_value",
    "strategy_params",
]
