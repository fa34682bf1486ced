"""Seeded slot-level simulator for jamming-resistant broadcast, plus an experiment harness."""

from __future__ import annotations

from .core import ConfigError, SimConfig, derive_budgets, make_config, round_schedule, validate_config
from .engine import TrialLog, simulate
from .harness import TrialResult, competitiveness_fit, emit_csv, run_experiment, run_trial

__all__ = [
    "ConfigError", "SimConfig", "TrialLog", "TrialResult", "competitiveness_fit", "derive_budgets",
    "emit_csv", "make_config", "round_schedule", "run_experiment", "run_trial", "simulate", "validate_config",
]
__version__ = "0.1.0"
