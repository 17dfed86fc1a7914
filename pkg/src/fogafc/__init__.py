"""Adaptive fog configuration under long-term energy budgets.

Discrete-time simulator for battery-powered fog networks: drift-plus-penalty
online control, chromatic parallel Gibbs sampling, and comparison baselines.
"""

from fogafc.scenario import (
    Scenario,
    ScenarioConfig,
    SlotContext,
    compute_channel,
    generate_scenario,
    generate_slot,
    generate_topology,
)
from fogafc.model import Assignment, associate, objective
from fogafc.lyapunov import ControllerConfig, MetricsTrace, run_afc, simulate
from fogafc.solver import AnnealSchedule, brute_force, cpgs, optimal_admission, sequential_gibbs

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "Assignment",
    "ControllerConfig",
    "MetricsTrace",
    "Scenario",
    "ScenarioConfig",
    "SlotContext",
    "associate",
    "brute_force",
    "compute_channel",
    "cpgs",
    "generate_scenario",
    "generate_slot",
    "generate_topology",
    "objective",
    "optimal_admission",
    "run_afc",
    "sequential_gibbs",
    "simulate",
]
