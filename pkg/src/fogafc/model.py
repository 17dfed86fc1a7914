"""Cost core: SN association, demand aggregation, energy and delay.

Everything here is a direct evaluation of the cost formulas on numpy arrays.
The samplers in :mod:`fogafc.solver` use a faster incremental evaluator and
are checked against these functions.

A hosting profile is an ``(N, K)`` boolean array; an admission profile is an
``(N,)`` float array in ``[0, 1]``. FN indices are 0-based and ``CLOUD``
(-1) marks demand sent straight to the cloud.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fogafc.scenario import Scenario, SlotContext

CLOUD = -1


class InfeasibleProfileError(ValueError):
    pass


@dataclass(frozen=True)
class Assignment:
    fn: np.ndarray  # (M,) serving FN per SN, CLOUD if none
    load: np.ndarray  # (N, K) aggregated demand, tasks per slot

    def workload(self, cpu_demand: np.ndarray) -> np.ndarray:
        """Cycles per slot received by each FN."""
        return self.load @ cpu_demand


def empty_hosting(scenario: Scenario) -> np.ndarray:
    return np.zeros((scenario.n_fns, scenario.n_services), dtype=bool)


def check_capacity(hosting: np.ndarray, scenario: Scenario) -> None:
    hosted = np.asarray(hosting, dtype=bool).sum(axis=1)
    over = np.flatnonzero(hosted > scenario.capacity)
    if over.size:
        n = int(over[0])
        raise InfeasibleProfileError(
            f"capacity violated at FN {n}: hosts {hosted[n]} > C={scenario.capacity[n]}"
        )


def associate(hosting: np.ndarray, ctx: SlotContext, scenario: Scenario) -> Assignment:
    """Send each SN to the best-channel reachable FN hosting its service.

    Ties in channel gain go to the lowest FN id.
    """
    hosting = np.asarray(hosting, dtype=bool)
    types = scenario.sn_type
    fn = np.full(scenario.n_sns, CLOUD, dtype=int)
    load = np.zeros((scenario.n_fns, scenario.n_services))
    for m, reach in enumerate(scenario.topology.sn_reach):
        k = types[m]
        best, best_gain = CLOUD, -np.inf
        for n in reach:
            if hosting[n, k] and ctx.channel[m, n] > best_gain:
                best, best_gain = n, ctx.channel[m, n]
        fn[m] = best
        if best != CLOUD:
            load[best, k] += ctx.demand[m]
    return Assignment(fn=fn, load=load)


def cloud_task_delay(ctx: SlotContext, scenario: Scenario) -> np.ndarray:
    """Per-task delay of each SN's service on the cloud path (s)."""
    k = scenario.sn_type
    cat = scenario.catalog
    return cat.cpu_demand[k] / scenario.cloud.cpu_freq + cat.input_size[k] / ctx.backbone_bps + ctx.rtt_s


def energy(n: int, assignment: Assignment, b_n: float, scenario: Scenario) -> float:
    work = float(assignment.load[n] @ scenario.catalog.cpu_demand)
    return float(scenario.static_energy[n] + scenario.unit_energy[n] * b_n * work)


def energies(assignment: Assignment, admission: np.ndarray, scenario: Scenario) -> np.ndarray:
    work = assignment.workload(scenario.catalog.cpu_demand)
    return scenario.static_energy + scenario.unit_energy * np.asarray(admission) * work


def delay(
    m: int, assignment: Assignment, admission: np.ndarray, ctx: SlotContext, scenario: Scenario
) -> float:
    k = scenario.sn_type[m]
    mu = scenario.catalog.cpu_demand[k]
    d = ctx.demand[m]
    cloud = mu / scenario.cloud.cpu_freq + scenario.catalog.input_size[k] / ctx.backbone_bps + ctx.rtt_s
    n = assignment.fn[m]
    if n == CLOUD:
        return float(d * cloud)
    b = admission[n]
    return float(b * d * mu / scenario.cpu_freq[n] + (1.0 - b) * d * cloud)


def delays(
    assignment: Assignment, admission: np.ndarray, ctx: SlotContext, scenario: Scenario
) -> np.ndarray:
    return np.array([delay(m, assignment, admission, ctx, scenario) for m in range(scenario.n_sns)])


def all_cloud_delay(ctx: SlotContext, scenario: Scenario) -> float:
    return float(ctx.demand @ cloud_task_delay(ctx, scenario))


def objective(
    hosting: np.ndarray,
    admission: np.ndarray,
    ctx: SlotContext,
    queues: np.ndarray,
    V: float,
    scenario: Scenario,
    assignment: Assignment | None = None,
) -> float:
    """Per-slot drift-plus-penalty cost: ``V * sum(D) + sum(q * E)``."""
    if assignment is None:
        assignment = associate(hosting, ctx, scenario)
    total_delay = delays(assignment, admission, ctx, scenario).sum()
    return float(V * total_delay + np.dot(queues, energies(assignment, admission, scenario)))


def local_objective(
    i: int,
    hosting: np.ndarray,
    ctx: SlotContext,
    queues: np.ndarray,
    V: float,
    scenario: Scenario,
    admission: np.ndarray | None = None,
) -> float:
    """Cost restricted to FN ``i``'s one-hop neighborhood and the SNs it covers.

    ``admission`` defaults to the optimal admission for ``hosting``.
    """
    assignment = associate(hosting, ctx, scenario)
    if admission is None:
        from fogafc.solver import optimal_admission

        admission = optimal_admission(hosting, ctx, queues, V, scenario, assignment=assignment).b
    topo = scenario.topology
    omega = topo.omega(i)
    covered = sorted({m for n in omega for m in topo.fn_reach[n]})
    d = sum(delay(m, assignment, admission, ctx, scenario) for m in covered)
    e = sum(queues[n] * energy(n, assignment, admission[n], scenario) for n in omega)
    return float(V * d + e)
