"""Scenario runner, property checkers and metrics."""

from .checks import CheckReport, CheckResult, check_atomic_broadcast, run_checks
from .metrics import commit_rate, measure_communication, measure_latency, measure_memory
from .scenario import RunReport, ScenarioConfig, run_scenario, sweep

__all__ = [
    "CheckReport", "CheckResult", "RunReport", "ScenarioConfig", "check_atomic_broadcast", "commit_rate",
    "measure_communication", "measure_latency", "measure_memory", "run_checks", "run_scenario", "sweep",
]
