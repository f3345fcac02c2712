"""Discrete-event network simulation: config loading, engine and metrics."""

from .config import ConfigError, PlacementSet, World, build_scenario, load_config, parse_config
from .compare import (
    COMPARISON_COLUMNS,
    PlacementRow,
    compare_placements,
    comparison_csv,
    inject_adversary,
)
from .engine import EventKind, SimulationResult, Simulator, run
from .metrics import METRICS_COLUMNS, MetricsReport, NodeCounters

__all__ = [
    "COMPARISON_COLUMNS", "ConfigError", "PlacementRow", "compare_placements",
    "comparison_csv", "inject_adversary", "EventKind", "METRICS_COLUMNS", "MetricsReport", "NodeCounters",
    "PlacementSet", "SimulationResult", "Simulator", "World", "build_scenario", "load_config",
    "parse_config", "run",
]
