"""Experiment harness: INI-configured sweeps, iteration tables, CLI."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .runner import ExperimentResult, RunRecord, run_experiment
from .tables import ComparisonReport, IterationTable, compare_tables, emit_table, read_table

__all__ = [
    "ComparisonReport",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "IterationTable",
    "RunRecord",
    "compare_tables",
    "data_path",
    "emit_table",
    "load_config",
    "parse_config",
    "read_table",
    "run_experiment",
]


def data_path(*parts: str):
    """Path to a shipped config or reference table, e.g. ``data_path("reference", "stokes.csv")``."""
    from importlib.resources import files
    return files(__name__).joinpath("data", *parts)
