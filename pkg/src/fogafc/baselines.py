"""Comparison strategies: delay-optimal, non-cooperative, single-slot-constrained."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from fogafc.lyapunov import AFC, SlotDecision
from fogafc.model import CLOUD, Assignment
from fogafc.scenario import Scenario, SlotContext
from fogafc.solver import AnnealSchedule, SlotProblem, optimal_admission


class BaselineKind(enum.Enum):
    D_OPTIMAL = "dopt"
    NCOP = "ncop"
    SSC = "ssc"


def d_optimal_problem(scenario: Scenario, ctx: SlotContext, d_max: float | None = None) -> SlotProblem:
    """Delay alone (zero queues); only the per-slot E_max cap limits admission."""
    return SlotProblem(scenario, ctx, np.zeros(scenario.n_fns), 1.0, delay_cap=d_max)


def ssc_problem(scenario: Scenario, ctx: SlotContext, d_max: float | None = None) -> SlotProblem:
    """Delay alone with every FN held to E_n <= Q_n within the slot."""
    if np.any(scenario.static_energy > scenario.budget):
        raise ValueError("single-slot constraint unsatisfiable: static energy exceeds budget")
    return SlotProblem(scenario, ctx, np.zeros(scenario.n_fns), 1.0, energy_cap=scenario.budget, delay_cap=d_max)


def d_optimal(
    scenario: Scenario, ctx: SlotContext, schedule: AnnealSchedule, seed, solver: str = "cpgs", d_max: float | None = None
) -> SlotDecision:
    return DOptimal(solver, schedule).decide(scenario, ctx, None, 1.0, d_max, seed)


def ssc(
    scenario: Scenario, ctx: SlotContext, schedule: AnnealSchedule, seed, solver: str = "cpgs", d_max: float | None = None
) -> SlotDecision:
    return SSC(solver, schedule).decide(scenario, ctx, None, 1.0, d_max, seed)


def dedicated_fns(scenario: Scenario) -> np.ndarray:
    """Nearest reachable FN per SN (lowest id on ties): the static NCOP partition."""
    dist = scenario.topology.distance
    out = np.empty(scenario.n_sns, dtype=int)
    for m, reach in enumerate(scenario.topology.sn_reach):
        out[m] = min(reach, key=lambda n: (dist[m, n], n))
    return out


def top_services(demand_by_type: np.ndarray, capacity: int) -> list[int]:
    """The ``capacity`` services with the most positive demand, lower id first on ties."""
    ranked = sorted((k for k in range(len(demand_by_type)) if demand_by_type[k] > 0), key=lambda k: (-demand_by_type[k], k))
    return ranked[:capacity]


def ncop(
    scenario: Scenario,
    ctx: SlotContext,
    queues: np.ndarray,
    V: float,
    dedicated: np.ndarray | None = None,
    d_max: float | None = None,
) -> SlotDecision:
    """Each FN serves only its own SNs and hosts their most-demanded services.

    Admission still follows the drift-plus-penalty rule with the FN's own queue.
    """
    if dedicated is None:
        dedicated = dedicated_fns(scenario)
    N, K = scenario.n_fns, scenario.n_services
    demand = np.zeros((N, K))
    np.add.at(demand, (dedicated, scenario.sn_type), ctx.demand)
    hosting = np.zeros((N, K), dtype=bool)
    for n in range(N):
        hosting[n, top_services(demand[n], int(scenario.capacity[n]))] = True
    fn = np.where(hosting[dedicated, scenario.sn_type], dedicated, CLOUD)
    load = np.zeros((N, K))
    served = fn != CLOUD
    np.add.at(load, (fn[served], scenario.sn_type[served]), ctx.demand[served])
    assignment = Assignment(fn=fn, load=load)
    adm = optimal_admission(hosting, ctx, queues, V, scenario, assignment=assignment, delay_cap=d_max)
    return SlotDecision(hosting, adm.b, assignment)


@dataclass
class DOptimal(AFC):
    name: str = "dopt"

    def decide(self, scenario, ctx, queues, V, d_max, seed):
        return self._solve(d_optimal_problem(scenario, ctx, d_max), seed)


@dataclass
class SSC(AFC):
    name: str = "ssc"

    def decide(self, scenario, ctx, queues, V, d_max, seed):
        return self._solve(ssc_problem(scenario, ctx, d_max), seed)


@dataclass
class NCOP:
    name: str = "ncop"
    _dedicated: dict = field(default_factory=dict, repr=False)

    def decide(self, scenario, ctx, queues, V, d_max, seed):
        key = id(scenario)
        if key not in self._dedicated:
            self._dedicated[key] = dedicated_fns(scenario)
        return ncop(scenario, ctx, queues, V, self._dedicated[key], d_max)


STRATEGIES = ("afc", "dopt", "ncop", "ssc")


def make_strategy(name: str, schedule: AnnealSchedule | None = None, solver: str = "cpgs", warm_start: bool = False):
    schedule = schedule or AnnealSchedule()
    if name == "afc":
        return AFC(solver, schedule, warm_start)
    if name == "dopt":
        return DOptimal(solver, schedule, warm_start)
    if name == "ssc":
        return SSC(solver, schedule, warm_start)
    if name == "ncop":
        return NCOP()
    raise ValueError(f"unknown strategy {name!r}; choose from {', '.join(STRATEGIES)}")
