"""Discrete-event simulation of runtime reconfiguration in software-defined TSN."""
from .controller import Aborted, Committed, Controller, NextPeriodStart, WcetModel, compute_execute_at
from .harness import LatencySeries, RunSummary, build, run_scenario, summarize
from .kernel import Kernel
from .scenario import Mode, Scenario, ScenarioInvalid, build_case_study

__version__ = "0.1.0"

__all__ = [
    "Aborted", "Committed", "Controller", "NextPeriodStart", "WcetModel", "compute_execute_at",
    "LatencySeries", "RunSummary", "build", "run_scenario", "summarize", "Kernel",
    "Mode", "Scenario", "ScenarioInvalid", "build_case_study",
]
