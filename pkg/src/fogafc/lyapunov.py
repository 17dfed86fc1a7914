"""Online controller: energy-deficit queues and the slot loop.

Each FN keeps a virtual queue of accumulated energy overspend. Every slot
the controller minimises ``V * delay + sum(q * energy)`` with the injected
per-slot solver, then pushes each queue by that slot's energy minus the
budget, floored at zero.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from fogafc import model
from fogafc.model import Assignment
from fogafc.scenario import Scenario, SlotContext, generate_slot
from fogafc.solver import AnnealSchedule, SlotProblem, SolveResult, brute_force, cpgs, sequential_gibbs

TRACE_SCHEMA = "fogafc-trace/1"
_SOLVER_STREAM = 4
# Float slack when auditing caps an accepted decision must satisfy.
_AUDIT_RTOL = 1e-9


class InfeasibleDecisionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    V: float = 1000.0
    d_max: float | None = None  # None: the slot's all-cloud delay
    horizon: int = 500

    def __post_init__(self) -> None:
        if not self.V > 0:
            raise ValueError("V must be > 0")
        if self.d_max is not None and not self.d_max > 0:
            raise ValueError("d_max must be > 0")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")


def update_queue(q: float | np.ndarray, energy: float | np.ndarray, budget: float | np.ndarray):
    """q' = max(q + E - Q, 0), elementwise."""
    out = np.maximum(np.asarray(q, dtype=float) + (np.asarray(energy) - budget), 0.0)
    return float(out) if out.ndim == 0 else out


class DeficitQueues:
    def __init__(self, n_fns: int):
        self.q = np.zeros(n_fns)

    def update(self, energy: np.ndarray, budget: np.ndarray) -> np.ndarray:
        self.q = update_queue(self.q, energy, budget)
        return self.q


@dataclass(frozen=True)
class SlotDecision:
    hosting: np.ndarray
    b: np.ndarray
    assignment: Assignment
    result: SolveResult | None = None


class Strategy(Protocol):
    name: str

    def decide(
        self, scenario: Scenario, ctx: SlotContext, queues: np.ndarray, V: float, d_max: float | None, seed: int
    ) -> SlotDecision: ...


# (problem, schedule, rng, initial masks or None) -> result
SolverFn = Callable[[SlotProblem, AnnealSchedule, np.random.Generator, "list[int] | None"], SolveResult]

SOLVERS: dict[str, SolverFn] = {
    "cpgs": lambda p, s, rng, init: cpgs(p, s, rng, init),
    "sequential": lambda p, s, rng, init: sequential_gibbs(p, s, rng, init),
    "brute": lambda p, s, rng, init: brute_force(p),
}


@dataclass
class AFC:
    """Drift-plus-penalty control with a pluggable per-slot solver."""

    solver: str | SolverFn = "cpgs"
    schedule: AnnealSchedule = field(default_factory=AnnealSchedule)
    warm_start: bool = False
    name: str = "afc"
    _prev: list[int] | None = field(default=None, repr=False)

    def decide(self, scenario, ctx, queues, V, d_max, seed):
        problem = SlotProblem(scenario, ctx, queues, V, delay_cap=d_max)
        return self._solve(problem, seed)

    def _solve(self, problem: SlotProblem, seed: int) -> SlotDecision:
        solve = SOLVERS[self.solver] if isinstance(self.solver, str) else self.solver
        init = self._prev if self.warm_start else None
        res = solve(problem, self.schedule, np.random.default_rng(seed), init)
        self._prev = res.masks
        return SlotDecision(res.hosting, res.b, model.associate(res.hosting, problem.ctx, problem.scenario), res)


def identity_predictor(ctx: SlotContext) -> SlotContext:
    return ctx


@dataclass
class MetricsTrace:
    strategy: str
    V: float
    budget: np.ndarray
    delay: np.ndarray  # (T,)
    energy: np.ndarray  # (T, N)
    queue: np.ndarray  # (T, N), after the slot's update
    fog_demand: np.ndarray  # (T,)
    cloud_demand: np.ndarray  # (T,)
    complete: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.delay)

    @property
    def n_fns(self) -> int:
        return len(self.budget)

    def running_delay(self) -> np.ndarray:
        return np.cumsum(self.delay) / np.arange(1, self.horizon + 1)

    def running_deficit_per_fn(self) -> np.ndarray:
        """Time-average of E_n - Q_n up to each slot, shape (T, N)."""
        return np.cumsum(self.energy - self.budget, axis=0) / np.arange(1, self.horizon + 1)[:, None]

    def running_deficit(self) -> np.ndarray:
        """Sum over FNs of the time-average overspend, clamped at zero."""
        return np.maximum(self.running_deficit_per_fn().sum(axis=1), 0.0)

    def running_deficit_positive(self) -> np.ndarray:
        """Sum over FNs of each FN's clamped time-average overspend."""
        return np.maximum(self.running_deficit_per_fn(), 0.0).sum(axis=1)

    def summary(self) -> dict:
        per_fn = self.running_deficit_per_fn()[-1]
        total = self.fog_demand.sum() + self.cloud_demand.sum()
        return {
            "strategy": self.strategy,
            "V": self.V,
            "horizon": self.horizon,
            "complete": self.complete,
            "time_avg_delay_s": float(self.delay.mean()),
            "time_avg_deficit_Wh": float(max(per_fn.sum(), 0.0)),
            "time_avg_deficit_mean_fn_Wh": float(max(per_fn.sum(), 0.0) / self.n_fns),
            "time_avg_deficit_positive_Wh": float(np.maximum(per_fn, 0.0).sum()),
            "time_avg_deficit_per_fn_Wh": per_fn.tolist(),
            "time_avg_energy_Wh": self.energy.mean(axis=0).tolist(),
            "budget_total_Wh": float(self.budget.sum()),
            "fog_share": float(self.fog_demand.sum() / total) if total > 0 else 0.0,
            "final_queue_Wh": self.queue[-1].tolist() if self.horizon else [],
        }

    def columns(self) -> list[str]:
        n = self.n_fns
        return (
            ["t", "sum_delay_s"]
            + [f"energy_Wh_{i}" for i in range(n)]
            + [f"q_Wh_{i}" for i in range(n)]
            + ["fog_demand", "cloud_demand"]
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# schema={TRACE_SCHEMA} strategy={self.strategy} V={self.V!r} complete={int(self.complete)}\n")
        buf.write(f"# budget_Wh={' '.join(repr(float(x)) for x in self.budget)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns())
        for t in range(self.horizon):
            w.writerow(
                [t, repr(float(self.delay[t]))]
                + [repr(float(x)) for x in self.energy[t]]
                + [repr(float(x)) for x in self.queue[t]]
                + [repr(float(self.fog_demand[t])), repr(float(self.cloud_demand[t]))]
            )
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path: str) -> MetricsTrace:
        with open(path) as fh:
            header = fh.readline()
            budget_line = fh.readline()
            if not header.startswith("# schema="):
                raise ValueError(f"{path}: missing schema header")
            fields = dict(tok.split("=", 1) for tok in header[2:].split())
            budget = np.array([float(x) for x in budget_line.split("=", 1)[1].split()])
            rows = list(csv.reader(fh))
        cols, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        n = len(budget)
        trace = cls(
            strategy=fields["strategy"],
            V=float(fields["V"]),
            budget=budget,
            delay=data[:, 1],
            energy=data[:, 2 : 2 + n],
            queue=data[:, 2 + n : 2 + 2 * n],
            fog_demand=data[:, 2 + 2 * n],
            cloud_demand=data[:, 3 + 2 * n],
            complete=fields.get("complete", "1") == "1",
            meta={"schema": fields["schema"]},
        )
        if trace.columns() != cols:
            raise ValueError(f"{path}: unexpected columns")
        return trace


def _audit(scenario: Scenario, decision: SlotDecision, energy: np.ndarray, total_delay: float, d_max: float, t: int):
    hosted = decision.hosting.sum(axis=1)
    bad = np.flatnonzero(hosted > scenario.capacity)
    if bad.size:
        n = int(bad[0])
        raise InfeasibleDecisionError(f"slot {t}: capacity violated at FN {n} ({hosted[n]} > {scenario.capacity[n]})")
    if np.any((decision.b < 0) | (decision.b > 1)):
        raise InfeasibleDecisionError(f"slot {t}: admission outside [0, 1]")
    over = np.flatnonzero(energy > scenario.energy_cap * (1 + _AUDIT_RTOL))
    if over.size:
        n = int(over[0])
        raise InfeasibleDecisionError(f"slot {t}: E_max violated at FN {n} ({energy[n]:.6g} > {scenario.energy_cap[n]:.6g} Wh)")
    if total_delay > d_max * (1 + _AUDIT_RTOL):
        raise InfeasibleDecisionError(f"slot {t}: delay cap violated ({total_delay:.6g} > {d_max:.6g} s)")


def simulate(
    scenario: Scenario,
    strategy: Strategy,
    config: ControllerConfig,
    seed: int,
    predictor: Callable[[SlotContext], SlotContext] = identity_predictor,
    on_slot: Callable[[int, SlotDecision], None] | None = None,
) -> MetricsTrace:
    """Run ``strategy`` for ``config.horizon`` slots with deficit queues.

    Strategies that ignore queues still get them updated, so every trace
    reports deficits on the same footing. A ``KeyboardInterrupt`` returns
    the slots finished so far with ``complete=False``.
    """
    T, N = config.horizon, scenario.n_fns
    queues = DeficitQueues(N)
    delay = np.zeros(T)
    energy = np.zeros((T, N))
    qtrace = np.zeros((T, N))
    fog = np.zeros(T)
    cloud = np.zeros(T)
    done = 0
    try:
        for t in range(T):
            ctx = generate_slot(scenario, t, seed)
            observed = predictor(ctx)
            slot_seed = int(np.random.SeedSequence([seed, _SOLVER_STREAM, t]).generate_state(1)[0])
            dec = strategy.decide(scenario, observed, queues.q.copy(), config.V, config.d_max, slot_seed)
            d_max = config.d_max if config.d_max is not None else model.all_cloud_delay(ctx, scenario)
            e = model.energies(dec.assignment, dec.b, scenario)
            total = float(model.delays(dec.assignment, dec.b, ctx, scenario).sum())
            _audit(scenario, dec, e, total, d_max, t)
            delay[t] = total
            energy[t] = e
            qtrace[t] = queues.update(e, scenario.budget)
            fog[t] = float(dec.b @ dec.assignment.load.sum(axis=1))
            cloud[t] = float(ctx.demand.sum()) - fog[t]
            done = t + 1
            if on_slot is not None:
                on_slot(t, dec)
    except KeyboardInterrupt:
        pass
    return MetricsTrace(
        strategy=strategy.name,
        V=float(config.V),
        budget=scenario.budget.copy(),
        delay=delay[:done],
        energy=energy[:done],
        queue=qtrace[:done],
        fog_demand=fog[:done],
        cloud_demand=cloud[:done],
        complete=done == T,
    )


def run_afc(
    scenario: Scenario,
    config: ControllerConfig,
    seed: int,
    solver: str | SolverFn = "cpgs",
    schedule: AnnealSchedule | None = None,
    warm_start: bool = False,
) -> MetricsTrace:
    return simulate(scenario, AFC(solver, schedule or AnnealSchedule(), warm_start), config, seed)


@dataclass(frozen=True)
class BoundReport:
    B: float
    delay_term: float
    deficit_term: float
    V: float
    epsilon: float


def bound_report(
    scenario: Scenario, config: ControllerConfig, d_ref: float, epsilon: float, d_max: float | None = None
) -> BoundReport:
    """Performance-bound constants for the controller.

    ``B = 0.5 * sum((E_max - Q)^2)``; delay stays within ``B / V`` of the
    reference delay, deficit within ``(B + V (D_max - d_ref)) / epsilon``.
    ``epsilon`` is the energy slack of some stationary policy; the caller
    supplies it.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    cap = d_max if d_max is not None else config.d_max
    if cap is None:
        raise ValueError("d_max is needed (config.d_max is unset)")
    B = 0.5 * float(np.sum((scenario.energy_cap - scenario.budget) ** 2))
    return BoundReport(
        B=B,
        delay_term=B / config.V,
        deficit_term=(B + config.V * (cap - d_ref)) / epsilon,
        V=float(config.V),
        epsilon=epsilon,
    )


def summary_json(trace: MetricsTrace, bound: BoundReport | None = None) -> str:
    out = trace.summary()
    if bound is not None:
        out["bound"] = {k: (v if math.isfinite(v) else None) for k, v in bound.__dict__.items()}
    return json.dumps(out, indent=1, sort_keys=True)
