"""Per-slot hosting/admission solvers.

For a fixed hosting profile the per-slot problem is linear in the admission
fractions, so each FN's admission is bang-bang: admit as much as the energy
cap allows when that lowers cost, otherwise nothing. Substituting that
closed form leaves a combinatorial problem over hosting profiles, which the
samplers below attack with annealed Gibbs sampling.

``SlotProblem`` caches everything that is constant within a slot and
evaluates candidate decisions incrementally. Its costs are checked against
the direct formulas in :mod:`fogafc.model`.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from fogafc import model
from fogafc.model import CLOUD, Assignment
from fogafc.scenario import Scenario, SlotContext

# Relative slack on the delay cap; keeps an all-cloud profile feasible under rounding.
_DELAY_SLACK = 1e-9


class ColoringError(RuntimeError):
    pass


class SearchSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Admission:
    b: np.ndarray
    feasible: bool
    total_delay: float
    energy: np.ndarray


def optimal_admission(
    hosting: np.ndarray,
    ctx: SlotContext,
    queues: np.ndarray,
    V: float,
    scenario: Scenario,
    assignment: Assignment | None = None,
    energy_cap: np.ndarray | None = None,
    delay_cap: float | None = None,
) -> Admission:
    """Cost-minimising admission fractions for a fixed hosting profile.

    ``energy_cap`` bounds each FN's per-slot energy (defaults to E_max);
    ``delay_cap`` is the per-slot bound on total delay, checked after the
    fact. A profile that breaks it comes back with ``feasible=False``.
    """
    if assignment is None:
        assignment = model.associate(hosting, ctx, scenario)
    cap = scenario.energy_cap if energy_cap is None else np.asarray(energy_cap, dtype=float)
    mu = scenario.catalog.cpu_demand
    cloud = model.cloud_task_delay(ctx, scenario)
    work = assignment.workload(mu)
    b = np.zeros(scenario.n_fns)
    for n in range(scenario.n_fns):
        if work[n] <= 0:
            continue
        served = np.flatnonzero(assignment.fn == n)
        d = ctx.demand[served]
        mu_m = mu[scenario.sn_type[served]]
        coeff = V * np.sum(d * (mu_m / scenario.cpu_freq[n] - cloud[served]))
        coeff += queues[n] * scenario.unit_energy[n] * work[n]
        if coeff < 0:
            room = (cap[n] - scenario.static_energy[n]) / (scenario.unit_energy[n] * work[n])
            b[n] = _within_cap(
                min(1.0, max(room, 0.0)), scenario.static_energy[n], scenario.unit_energy[n], work[n], cap[n]
            )
    total = float(model.delays(assignment, b, ctx, scenario).sum())
    feasible = delay_cap is None or total <= delay_cap * (1 + _DELAY_SLACK)
    return Admission(b=b, feasible=feasible, total_delay=total, energy=model.energies(assignment, b, scenario))


def _within_cap(b: float, e0: float, kappa: float, work: float, cap: float) -> float:
    # The division can round up; step down so E <= cap holds exactly
    # (same operation order as model.energies).
    while b > 0 and e0 + kappa * b * work > cap:
        b = float(np.nextafter(b, 0.0))
    return b


def candidate_masks(n_services: int, capacity: int) -> list[int]:
    """Feasible hosting decisions of one FN as bitmasks.

    Ordered by number of hosted services, then lexicographically by the
    sorted service tuple.
    """
    out = []
    for size in range(min(capacity, n_services) + 1):
        for combo in itertools.combinations(range(n_services), size):
            out.append(sum(1 << k for k in combo))
    return out


def masks_to_hosting(masks: Sequence[int], n_services: int) -> np.ndarray:
    return np.array([[(mk >> k) & 1 for k in range(n_services)] for mk in masks], dtype=bool)


def hosting_to_masks(hosting: np.ndarray) -> list[int]:
    return [sum(1 << int(k) for k in np.flatnonzero(row)) for row in np.asarray(hosting, dtype=bool)]


class SlotProblem:
    """One slot's hosting problem with queues, ``V`` and caps frozen.

    ``delay_cap=None`` uses the slot's all-cloud delay, which every profile
    meets when fog processing is faster than the cloud path.
    """

    def __init__(
        self,
        scenario: Scenario,
        ctx: SlotContext,
        queues: np.ndarray,
        V: float,
        energy_cap: np.ndarray | None = None,
        delay_cap: float | None = None,
    ):
        if V <= 0:
            raise ValueError("V must be positive")
        self.scenario = scenario
        self.ctx = ctx
        self.queues = np.asarray(queues, dtype=float)
        if np.any(self.queues < 0):
            raise ValueError("queues must be non-negative")
        self.V = float(V)
        self.energy_cap = scenario.energy_cap if energy_cap is None else np.asarray(energy_cap, dtype=float)
        self.delay_cap = model.all_cloud_delay(ctx, scenario) if delay_cap is None else float(delay_cap)

        topo = scenario.topology
        self.n_fns = scenario.n_fns
        self.n_services = scenario.n_services
        self.fn_reach = topo.fn_reach
        self.omega = [topo.omega(i) for i in range(self.n_fns)]
        self.blanket = [tuple(sorted(c)) for c in topo.conflict]
        self.candidates = [candidate_masks(self.n_services, int(c)) for c in scenario.capacity]

        types = scenario.sn_type
        mu = scenario.catalog.cpu_demand[types]
        d = ctx.demand
        cloud = model.cloud_task_delay(ctx, scenario)
        self.sn_type = types.tolist()
        self.pref = [
            tuple(sorted(reach, key=lambda n, m=m: (-ctx.channel[m, n], n)))
            for m, reach in enumerate(topo.sn_reach)
        ]
        # Per (SN, FN) coefficients of the affine admission cost.
        fog = d[:, None] * mu[:, None] / scenario.cpu_freq[None, :]
        dly = fog - (d * cloud)[:, None]
        energy_coef = self.queues[None, :] * scenario.unit_energy[None, :] * (d * mu)[:, None]
        self.coef = (self.V * dly + energy_coef).tolist()
        self.delay_gain = dly.tolist()
        self.work = (d * mu).tolist()
        self.room = ((self.energy_cap - scenario.static_energy) / scenario.unit_energy).tolist()
        self.room_pos = [max(r, 0.0) for r in self.room]
        self.base_delay = float(np.dot(d, cloud))
        self.base_cost = self.V * self.base_delay + float(np.dot(self.queues, scenario.static_energy))
        self._cache: dict[tuple, tuple[list[float], list[float]]] = {}

    # -- evaluation ---------------------------------------------------------

    def assign(self, m: int, masks: Sequence[int]) -> int:
        k = self.sn_type[m]
        for n in self.pref[m]:
            if (masks[n] >> k) & 1:
                return n
        return CLOUD

    def assign_all(self, masks: Sequence[int]) -> list[int]:
        return [self.assign(m, masks) for m in range(len(self.pref))]

    def _fn_terms(self, n: int, c: float, w: float, dl: float) -> tuple[float, float]:
        """(cost change, delay change) of FN ``n`` relative to all-cloud."""
        if w <= 0 or c >= 0:
            return 0.0, 0.0
        b = min(1.0, self.room_pos[n] / w)
        return b * c, b * dl

    def _fn_sums(self, n: int, v: Sequence[int], skip: frozenset = frozenset()) -> list[float]:
        c = w = dl = 0.0
        for m in self.fn_reach[n]:
            if v[m] == n and m not in skip:
                c += self.coef[m][n]
                w += self.work[m]
                dl += self.delay_gain[m][n]
        return [c, w, dl]

    def evaluate(self, masks: Sequence[int]) -> tuple[float, float]:
        """(objective, total delay) of a profile at its optimal admission."""
        v = self.assign_all(masks)
        cost, dly = self.base_cost, self.base_delay
        for n in range(self.n_fns):
            dc, dd = self._fn_terms(n, *self._fn_sums(n, v))
            cost += dc
            dly += dd
        return cost, dly

    def admission(self, masks: Sequence[int]) -> Admission:
        hosting = masks_to_hosting(masks, self.n_services)
        return optimal_admission(
            hosting, self.ctx, self.queues, self.V, self.scenario,
            energy_cap=self.energy_cap, delay_cap=self.delay_cap,
        )

    def local_values(self, i: int, masks: Sequence[int], v: Sequence[int]) -> tuple[list[float], list[float]]:
        """Local cost and delay of every candidate of FN ``i``, up to constants.

        Only SNs in FN ``i``'s range can change server, and they can only
        move between FNs in its one-hop neighborhood, so the values depend
        on nothing beyond FN ``i``'s two-hop blanket.
        """
        key = (i,) + tuple(masks[j] for j in self.blanket[i])
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        # SNs whose server depends on a_i: no better-channel FN already hosts their type.
        # Their contributions are grouped per type: to FN i if hosted, else to the fallback.
        slots = [i]
        hosted: dict[int, list[float]] = {}
        fallback: dict[int, list[tuple[int, float, float, float]]] = {}
        skip = set()
        coef, work, gain = self.coef, self.work, self.delay_gain
        for m in self.fn_reach[i]:
            k = self.sn_type[m]
            pref = self.pref[m]
            pos = pref.index(i)
            if any((masks[n] >> k) & 1 for n in pref[:pos]):
                continue
            skip.add(m)
            alt = next((n for n in pref[pos + 1:] if (masks[n] >> k) & 1), CLOUD)
            acc = hosted.setdefault(k, [0.0, 0.0, 0.0])
            acc[0] += coef[m][i]
            acc[1] += work[m]
            acc[2] += gain[m][i]
            if alt != CLOUD:
                if alt not in slots:
                    slots.append(alt)
                fallback.setdefault(k, []).append((slots.index(alt), coef[m][alt], work[m], gain[m][alt]))
        base = [self._fn_sums(n, v, skip) for n in slots]

        # Candidates agreeing on the toggled types give the same values.
        relevant = sum(1 << k for k in hosted)
        seen: dict[int, tuple[float, float]] = {}
        costs, dlys = [], []
        for cand in self.candidates[i]:
            pattern = cand & relevant
            if pattern not in seen:
                sums = [list(b) for b in base]
                for k, acc in hosted.items():
                    if (pattern >> k) & 1:
                        s = sums[0]
                        s[0] += acc[0]
                        s[1] += acc[1]
                        s[2] += acc[2]
                    else:
                        for j, c, w, dl in fallback.get(k, ()):
                            s = sums[j]
                            s[0] += c
                            s[1] += w
                            s[2] += dl
                cost = dly = 0.0
                for n, (c, w, dl) in zip(slots, sums):
                    if w > 0 and c < 0:
                        b = min(1.0, self.room_pos[n] / w)
                        cost += b * c
                        dly += b * dl
                seen[pattern] = (cost, dly)
            cost, dly = seen[pattern]
            costs.append(cost)
            dlys.append(dly)
        self._cache[key] = (costs, dlys)
        return costs, dlys


def gibbs_probabilities(values: Sequence[float], sigma: float, feasible: Sequence[bool] | None = None) -> np.ndarray:
    """exp(-value / sigma), normalised over feasible entries with a max-shift."""
    vals = np.asarray(values, dtype=float)
    ok = np.ones(len(vals), dtype=bool) if feasible is None else np.asarray(feasible, dtype=bool)
    if not ok.any():
        raise ValueError("no feasible decision")
    if not math.isfinite(sigma):
        p = ok.astype(float)
        return p / p.sum()
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z = np.full(len(vals), -np.inf)
    z[ok] = -(vals[ok] - vals[ok].min()) / sigma
    p = np.exp(z)
    return p / p.sum()


def conditional_distribution(
    problem: SlotProblem, i: int, masks: Sequence[int], sigma: float, v: Sequence[int] | None = None
) -> np.ndarray:
    """Sampling distribution of FN ``i``'s decision over its candidate list.

    Candidates that would break the delay cap get probability zero. Raises
    ``ValueError`` if none is feasible.
    """
    if v is None:
        v = problem.assign_all(masks)
    costs, dlys = problem.local_values(i, masks, v)
    feasible = _feasible(problem, i, masks, dlys)
    return gibbs_probabilities(costs, sigma, feasible)


def _feasible(problem: SlotProblem, i: int, masks: Sequence[int], dlys: Sequence[float]) -> list[bool]:
    cur = problem.candidates[i].index(masks[i])
    _, now = problem.evaluate(masks)
    limit = problem.delay_cap * (1 + _DELAY_SLACK)
    return [now - dlys[cur] + d <= limit for d in dlys]


@dataclass
class AnnealSchedule:
    """Temperature schedule and stopping rule shared by both samplers.

    ``sigma0=None`` calibrates the starting temperature to the mean spread
    of the FNs' candidate costs at the initial profile, times ``sigma0_scale``.
    """

    sigma0: float | None = None
    decay: str = "geometric"
    rho: float = 0.95
    sigma_min_ratio: float = 1e-3
    max_sweeps: int = 200
    window: int = 5
    tol: float = 1e-4
    sigma0_scale: float = 1.0
    stop_on_convergence: bool = True

    def __post_init__(self) -> None:
        if self.decay not in ("geometric", "fixed"):
            raise ValueError("decay must be 'geometric' or 'fixed'")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        if self.sigma0 is not None and self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")
        if self.sigma_min_ratio <= 0 or self.max_sweeps < 1 or self.window < 1:
            raise ValueError("sigma_min_ratio, max_sweeps and window must be positive")

    @classmethod
    def fast(cls) -> AnnealSchedule:
        """Cooler start and quicker decay; meant for warm-started slot-to-slot solves."""
        return cls(rho=0.8, sigma0_scale=0.1)

    @classmethod
    def fixed(cls, sigma: float, sweeps: int) -> AnnealSchedule:
        return cls(sigma0=sigma, decay="fixed", max_sweeps=sweeps, stop_on_convergence=False)

    def temperatures(self, sigma0: float) -> Iterable[float]:
        floor = self.sigma_min_ratio * sigma0
        sigma = sigma0
        for _ in range(self.max_sweeps):
            yield sigma
            if self.decay == "geometric":
                sigma = max(sigma * self.rho, floor)


@dataclass
class TraceRow:
    iteration: int
    sweep: int
    sigma: float
    objective: float
    colorset: tuple[int, ...]


@dataclass
class SolveResult:
    masks: list[int]
    hosting: np.ndarray
    admission: Admission
    objective: float
    sweeps: int
    rounds: int
    converged: bool
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def b(self) -> np.ndarray:
        return self.admission.b


def calibrate_sigma(problem: SlotProblem, masks: Sequence[int]) -> float:
    v = problem.assign_all(masks)
    spreads = []
    for i in range(problem.n_fns):
        costs, _ = problem.local_values(i, masks, v)
        spread = max(costs) - min(costs)
        if spread > 0:
            spreads.append(spread)
    return float(np.mean(spreads)) if spreads else 1.0


def _sample_index(p: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(idx, len(p) - 1)


def _run_chain(
    problem: SlotProblem,
    blocks: list[tuple[int, ...]],
    schedule: AnnealSchedule,
    rng: np.random.Generator,
    init: Sequence[int] | None,
    random_blocks: bool,
    record: bool,
    on_sweep: Callable[[list[int]], None] | None,
) -> SolveResult:
    masks = list(init) if init is not None else [0] * problem.n_fns
    for i, mk in enumerate(masks):
        if mk not in problem.candidates[i]:
            raise model.InfeasibleProfileError(f"initial decision of FN {i} exceeds capacity")
    v = problem.assign_all(masks)
    cost, dly = problem.evaluate(masks)
    limit = problem.delay_cap * (1 + _DELAY_SLACK)
    best = (cost, list(masks)) if dly <= limit else (math.inf, list(masks))

    sigma0 = schedule.sigma0 if schedule.sigma0 is not None else schedule.sigma0_scale * calibrate_sigma(problem, masks)
    trace: list[TraceRow] = []
    history = [cost]
    rounds = sweeps = 0
    converged = False
    for sigma in schedule.temperatures(sigma0):
        order = [blocks[int(rng.integers(len(blocks)))] for _ in blocks] if random_blocks else blocks
        for block in order:
            # Every member reads the same snapshot; results are applied together.
            updates = []
            for i in block:
                costs, dlys = problem.local_values(i, masks, v)
                cur = problem.candidates[i].index(masks[i])
                feasible = [dly - dlys[cur] + d <= limit for d in dlys]
                if not any(feasible):
                    warnings.warn(f"FN {i}: no delay-feasible decision, keeping current", stacklevel=2)
                    continue
                p = gibbs_probabilities(costs, sigma, feasible)
                new = _sample_index(p, rng)
                updates.append((i, new, costs[new] - costs[cur], dlys[new] - dlys[cur]))
            for i, new, dc, dd in updates:
                masks[i] = problem.candidates[i][new]
                cost += dc
                dly += dd
            for i, _, _, _ in updates:
                for m in problem.fn_reach[i]:
                    v[m] = problem.assign(m, masks)
            rounds += 1
            if record:
                trace.append(TraceRow(rounds, sweeps + 1, sigma, cost, tuple(block)))
            if cost < best[0] and dly <= limit:
                best = (cost, list(masks))
        sweeps += 1
        cost, dly = problem.evaluate(masks)  # resync accumulated float drift
        if cost < best[0] and dly <= limit:
            best = (cost, list(masks))
        history.append(cost)
        if on_sweep is not None:
            on_sweep(masks)
        if schedule.stop_on_convergence and len(history) > schedule.window:
            recent = history[-schedule.window - 1:]
            scale = max(abs(recent[-1]), 1e-300)
            if (max(recent) - min(recent)) / scale < schedule.tol:
                converged = True
                break

    final = best[1] if math.isfinite(best[0]) else masks
    adm = problem.admission(final)
    obj, _ = problem.evaluate(final)
    return SolveResult(
        masks=list(final),
        hosting=masks_to_hosting(final, problem.n_services),
        admission=adm,
        objective=obj,
        sweeps=sweeps,
        rounds=rounds,
        converged=converged,
        trace=trace,
    )


def sequential_gibbs(
    problem: SlotProblem,
    schedule: AnnealSchedule | None = None,
    seed: int | np.random.Generator = 0,
    init: Sequence[int] | None = None,
    record: bool = False,
    on_sweep: Callable[[list[int]], None] | None = None,
) -> SolveResult:
    """Annealed Gibbs sampler updating one FN at a time in id order.

    Returns the best delay-feasible profile seen, with its optimal admission.
    """
    rng = np.random.default_rng(seed)
    blocks = [(i,) for i in range(problem.n_fns)]
    return _run_chain(problem, blocks, schedule or AnnealSchedule(), rng, init, False, record, on_sweep)


def check_coloring(problem: SlotProblem, colorsets: Sequence[Sequence[int]]) -> None:
    for color, members in enumerate(colorsets):
        for a, b in itertools.combinations(members, 2):
            if b in problem.blanket[a]:
                raise ColoringError(f"FNs {a} and {b} share color {color} but lie in each other's blanket")


def cpgs(
    problem: SlotProblem,
    schedule: AnnealSchedule | None = None,
    seed: int | np.random.Generator = 0,
    init: Sequence[int] | None = None,
    colorsets: Sequence[Sequence[int]] | None = None,
    random_order: bool = False,
    record: bool = False,
    on_sweep: Callable[[list[int]], None] | None = None,
) -> SolveResult:
    """Chromatic parallel Gibbs sampling.

    Each iteration activates one colorset; its members sample new decisions
    from the previous iteration's blanket decisions and publish them at a
    barrier. A sweep is ``L`` iterations (round-robin over colors unless
    ``random_order``). Annealing and stopping follow ``schedule``.
    """
    if colorsets is None:
        colorsets = problem.scenario.topology.colorsets()
    colorsets = [tuple(c) for c in colorsets if len(c)]
    covered = sorted(n for c in colorsets for n in c)
    if covered != list(range(problem.n_fns)):
        raise ColoringError("colorsets must partition the FNs")
    check_coloring(problem, colorsets)
    rng = np.random.default_rng(seed)
    return _run_chain(problem, colorsets, schedule or AnnealSchedule(), rng, init, random_order, record, on_sweep)


def brute_force(problem: SlotProblem, max_profiles: int = 10**6) -> SolveResult:
    """Exact minimiser by enumeration, evaluated with the direct cost formulas.

    Ties go to the lexicographically first profile in candidate order.
    """
    size = math.prod(len(c) for c in problem.candidates)
    if size > max_profiles:
        raise SearchSpaceTooLarge(f"{size} profiles exceeds cap {max_profiles}")
    sc = problem.scenario
    best_obj, best = math.inf, None
    for masks in itertools.product(*problem.candidates):
        hosting = masks_to_hosting(masks, problem.n_services)
        assignment = model.associate(hosting, problem.ctx, sc)
        adm = optimal_admission(
            hosting, problem.ctx, problem.queues, problem.V, sc,
            assignment=assignment, energy_cap=problem.energy_cap, delay_cap=problem.delay_cap,
        )
        if not adm.feasible:
            continue
        obj = model.objective(hosting, adm.b, problem.ctx, problem.queues, problem.V, sc, assignment=assignment)
        if obj < best_obj:
            best_obj, best = obj, (list(masks), hosting, adm)
    if best is None:
        raise model.InfeasibleProfileError("no delay-feasible hosting profile")
    masks, hosting, adm = best
    return SolveResult(masks, hosting, adm, best_obj, sweeps=0, rounds=size, converged=True)


def exact_gibbs_distribution(problem: SlotProblem, sigma: float) -> dict[tuple[int, ...], float]:
    """Gibbs law over all feasible profiles by enumeration (direct formulas)."""
    sc = problem.scenario
    profiles, costs = [], []
    for masks in itertools.product(*problem.candidates):
        hosting = masks_to_hosting(masks, problem.n_services)
        adm = optimal_admission(
            hosting, problem.ctx, problem.queues, problem.V, sc,
            energy_cap=problem.energy_cap, delay_cap=problem.delay_cap,
        )
        if adm.feasible:
            profiles.append(tuple(masks))
            costs.append(model.objective(hosting, adm.b, problem.ctx, problem.queues, problem.V, sc))
    p = gibbs_probabilities(costs, sigma)
    return dict(zip(profiles, p.tolist()))


def sample_profiles(
    problem: SlotProblem,
    sigma: float,
    n_samples: int,
    burn_in: int = 1000,
    sampler: str = "sequential",
    seed: int = 0,
    **kwargs,
) -> dict[tuple[int, ...], int]:
    """Visit counts of profiles, one sample per sweep after burn-in, at fixed sigma."""
    counts: dict[tuple[int, ...], int] = {}
    seen = 0

    def tally(masks: list[int]) -> None:
        nonlocal seen
        seen += 1
        if seen > burn_in:
            key = tuple(masks)
            counts[key] = counts.get(key, 0) + 1

    schedule = AnnealSchedule.fixed(sigma, burn_in + n_samples)
    run = {"sequential": sequential_gibbs, "cpgs": cpgs}[sampler]
    run(problem, schedule, seed, on_sweep=tally, **kwargs)
    return counts


def total_variation(p: dict, q: dict) -> float:
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def rounds_to_plateau(trace: Sequence[TraceRow], rel_tol: float = 1e-3) -> int:
    """First iteration after which the objective stays within ``rel_tol`` of its final value."""
    if not trace:
        return 0
    final = trace[-1].objective
    scale = max(abs(final), 1e-300)
    last_out = 0
    for row in trace:
        if abs(row.objective - final) / scale > rel_tol:
            last_out = row.iteration
    return last_out + 1


TRACE_COLUMNS = ("iteration", "sweep", "sigma", "objective", "colorset")


def write_trace(trace: Sequence[TraceRow], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in trace:
            w.writerow([r.iteration, r.sweep, repr(r.sigma), repr(r.objective), " ".join(map(str, r.colorset))])
