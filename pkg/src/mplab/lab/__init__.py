"""Scenario runner: parsing, experiments, tabular output and figures."""

from .experiments import RUNNERS, run
from .results import Assertion, ExperimentResult, Table
from .scenario import Scenario, ScenarioError, load_scenario, make_potential, parse_scenario

__all__ = [
    "RUNNERS",
    "run",
    "Assertion",
    "ExperimentResult",
    "Table",
    "Scenario",
    "ScenarioError",
    "load_scenario",
    "make_potential",
    "parse_scenario",
]
