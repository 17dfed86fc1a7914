"""Network instances and per-slot dynamics.

A scenario fixes the fog node (FN) mesh, the sensor node (SN) scatter, the
service catalog and the derived graphs. Slot contexts carry everything that
changes from one decision period to the next: demand rates, backbone rate,
round-trip time and channel gains.

Units are fixed at this boundary: bits, cycles, seconds, Wh, metres.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

SNAPSHOT_VERSION = 1
BITS_PER_MB = 8e6

# Stream ids mixed into the seed so scenario, slot and phase draws never overlap.
_STREAM_SCENARIO = 0
_STREAM_SLOT = 1
_STREAM_PHASE = 2
_STREAM_FIXED_CHANNEL = 3


class ScenarioError(ValueError):
    """Invalid scenario configuration or an instance that cannot be drawn."""


@dataclass(frozen=True)
class ScenarioConfig:
    area_m: tuple[float, float] = (500.0, 500.0)
    fn_grid: tuple[int, int] = (4, 4)
    radius_m: float = 120.0
    expected_sns: float = 52.0
    n_services: int = 6
    capacity: int = 2
    input_size_mb: tuple[float, float] = (0.5, 1.0)
    cpu_demand_mcycles: tuple[float, float] = (50.0, 200.0)
    fn_cpu_hz: float = 2e9
    cloud_cpu_hz: float = 4e9
    unit_energy_wh: float = 6e-9
    static_energy_wh: float = 1.0
    budget_wh: float = 10.0
    energy_cap_factor: float = 2.0
    demand_range: tuple[float, float] = (0.0, 10.0)
    backbone_mbps: tuple[float, float] = (2.0, 6.0)
    rtt_s: float = 0.2
    shadowing_std_db: float = 4.0
    carrier_mhz: float = 2400.0
    demand_mode: str = "uniform"
    demand_period: int = 24
    redraw_channels: bool = True
    max_retries: int = 100

    def __post_init__(self) -> None:
        errors = self.validate()
        if errors:
            raise ScenarioError("; ".join(errors))

    def validate(self) -> list[str]:
        errs = []
        if min(self.area_m) <= 0:
            errs.append("area_m: dimensions must be > 0")
        if min(self.fn_grid) < 1:
            errs.append("fn_grid: dimensions must be >= 1")
        if self.radius_m <= 0:
            errs.append("radius_m: must be > 0")
        if self.expected_sns <= 0:
            errs.append("expected_sns: must be > 0")
        if self.n_services < 1:
            errs.append("n_services: must be >= 1")
        if self.capacity < 1:
            errs.append("capacity: must be >= 1")
        for name in ("input_size_mb", "cpu_demand_mcycles", "backbone_mbps"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                errs.append(f"{name}: need 0 < low <= high")
        lo, hi = self.demand_range
        if not 0 <= lo <= hi:
            errs.append("demand_range: need 0 <= low <= high")
        if self.fn_cpu_hz <= 0 or self.cloud_cpu_hz <= 0:
            errs.append("fn_cpu_hz/cloud_cpu_hz: must be > 0")
        if self.unit_energy_wh <= 0:
            errs.append("unit_energy_wh: must be > 0")
        if self.static_energy_wh < 0:
            errs.append("static_energy_wh: must be >= 0")
        if not self.budget_wh > self.static_energy_wh:
            errs.append("budget_wh: must exceed static_energy_wh")
        if self.energy_cap_factor < 1:
            errs.append("energy_cap_factor: must be >= 1 (E_max >= Q)")
        if self.rtt_s < 0:
            errs.append("rtt_s: must be >= 0")
        if self.shadowing_std_db < 0:
            errs.append("shadowing_std_db: must be >= 0")
        if self.demand_mode not in ("uniform", "sinusoidal"):
            errs.append("demand_mode: one of 'uniform', 'sinusoidal'")
        if self.demand_period < 1:
            errs.append("demand_period: must be >= 1")
        if self.max_retries < 1:
            errs.append("max_retries: must be >= 1")
        return errs

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ScenarioConfig:
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ScenarioError(f"unknown scenario field(s): {', '.join(unknown)}")
        kwargs = {}
        for key, value in data.items():
            default = known[key].default
            if isinstance(default, tuple):
                if not isinstance(value, (list, tuple)) or len(value) != len(default):
                    raise ScenarioError(f"{key}: expected a list of {len(default)} numbers")
                value = tuple(type(d)(v) for d, v in zip(default, value))
            elif isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ScenarioError(f"{key}: expected true/false")
            elif isinstance(default, (int, float)):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ScenarioError(f"{key}: expected a number, got {value!r}")
                if isinstance(default, int) and value != int(value):
                    raise ScenarioError(f"{key}: expected an integer, got {value!r}")
                value = type(default)(value)
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict[str, Any]:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def replace(self, **changes: Any) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class ServiceCatalog:
    input_size: np.ndarray  # bits per task
    cpu_demand: np.ndarray  # cycles per task

    def __post_init__(self) -> None:
        if len(self.input_size) < 1 or len(self.input_size) != len(self.cpu_demand):
            raise ScenarioError("catalog needs K >= 1 services with matching arrays")
        if np.any(self.input_size <= 0) or np.any(self.cpu_demand <= 0):
            raise ScenarioError("catalog sizes and cycle counts must be positive")

    @property
    def n_services(self) -> int:
        return len(self.input_size)


@dataclass(frozen=True)
class FogNodeSpec:
    id: int
    position: tuple[float, float]
    cpu_freq: float
    unit_energy: float
    static_energy: float
    budget: float
    energy_cap: float
    capacity: int
    radius: float

    def __post_init__(self) -> None:
        if self.cpu_freq <= 0 or self.unit_energy <= 0 or self.static_energy < 0:
            raise ScenarioError(f"FN {self.id}: cpu_freq, unit_energy must be > 0, static_energy >= 0")
        if not self.energy_cap >= self.budget > self.static_energy:
            raise ScenarioError(f"FN {self.id}: need energy_cap >= budget > static_energy")
        if self.capacity < 1:
            raise ScenarioError(f"FN {self.id}: capacity must be >= 1")


@dataclass(frozen=True)
class SensorNodeSpec:
    id: int
    position: tuple[float, float]
    service_type: int  # 0-based index into the catalog


@dataclass(frozen=True)
class CloudSpec:
    cpu_freq: float


@dataclass(frozen=True)
class Topology:
    """Reach sets and derived graphs. FNs and SNs are 0-based indices."""

    fn_reach: tuple[tuple[int, ...], ...]  # SNs within radius of each FN
    sn_reach: tuple[tuple[int, ...], ...]  # FNs reachable by each SN
    neighbors: tuple[frozenset[int], ...]  # fog-graph adjacency, self excluded
    conflict: tuple[frozenset[int], ...]  # FNs within two hops, self excluded
    coloring: tuple[int, ...]
    distance: np.ndarray  # (M, N) metres

    @property
    def n_fns(self) -> int:
        return len(self.fn_reach)

    @property
    def n_sns(self) -> int:
        return len(self.sn_reach)

    @property
    def n_colors(self) -> int:
        return max(self.coloring) + 1 if self.coloring else 0

    def omega(self, n: int) -> tuple[int, ...]:
        """One-hop neighborhood of ``n``, including ``n``."""
        return tuple(sorted(self.neighbors[n] | {n}))

    def edges(self) -> set[tuple[int, int]]:
        return {(i, j) for i, nb in enumerate(self.neighbors) for j in nb if i < j}

    def conflict_edges(self) -> set[tuple[int, int]]:
        return {(i, j) for i, nb in enumerate(self.conflict) for j in nb if i < j}

    def colorsets(self) -> list[tuple[int, ...]]:
        sets: list[list[int]] = [[] for _ in range(self.n_colors)]
        for n, c in enumerate(self.coloring):
            sets[c].append(n)
        return [tuple(s) for s in sets]


@dataclass(frozen=True)
class SlotContext:
    t: int
    demand: np.ndarray  # tasks per slot, per SN
    backbone_bps: float
    rtt_s: float
    channel: np.ndarray  # (M, N) dB gain, NaN where unreachable


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    catalog: ServiceCatalog
    fog_nodes: tuple[FogNodeSpec, ...]
    sensors: tuple[SensorNodeSpec, ...]
    cloud: CloudSpec
    topology: Topology
    seed: int = 0
    # Cached per-node arrays; filled in __post_init__.
    cpu_freq: np.ndarray = field(init=False, repr=False)
    unit_energy: np.ndarray = field(init=False, repr=False)
    static_energy: np.ndarray = field(init=False, repr=False)
    budget: np.ndarray = field(init=False, repr=False)
    energy_cap: np.ndarray = field(init=False, repr=False)
    capacity: np.ndarray = field(init=False, repr=False)
    sn_type: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        fns = self.fog_nodes
        put = object.__setattr__
        put(self, "cpu_freq", np.array([f.cpu_freq for f in fns], dtype=float))
        put(self, "unit_energy", np.array([f.unit_energy for f in fns], dtype=float))
        put(self, "static_energy", np.array([f.static_energy for f in fns], dtype=float))
        put(self, "budget", np.array([f.budget for f in fns], dtype=float))
        put(self, "energy_cap", np.array([f.energy_cap for f in fns], dtype=float))
        put(self, "capacity", np.array([f.capacity for f in fns], dtype=int))
        put(self, "sn_type", np.array([s.service_type for s in self.sensors], dtype=int))
        for s in self.sensors:
            if not 0 <= s.service_type < self.catalog.n_services:
                raise ScenarioError(f"SN {s.id}: service type {s.service_type} not in catalog")
        if np.any(self.cloud.cpu_freq <= self.cpu_freq):
            warnings.warn("cloud CPU frequency does not exceed every FN frequency", stacklevel=2)

    @property
    def n_fns(self) -> int:
        return len(self.fog_nodes)

    @property
    def n_sns(self) -> int:
        return len(self.sensors)

    @property
    def n_services(self) -> int:
        return self.catalog.n_services

    def with_capacity(self, capacity: int) -> Scenario:
        fns = tuple(dataclasses.replace(f, capacity=capacity) for f in self.fog_nodes)
        return dataclasses.replace(self, fog_nodes=fns, config=self.config.replace(capacity=capacity))

    def with_budget(self, budget: float, energy_cap: float | None = None) -> Scenario:
        cap = energy_cap if energy_cap is not None else budget * self.config.energy_cap_factor
        fns = tuple(dataclasses.replace(f, budget=budget, energy_cap=cap) for f in self.fog_nodes)
        return dataclasses.replace(self, fog_nodes=fns)


def pathloss_db(distance_m: float | np.ndarray, carrier_mhz: float = 2400.0) -> float | np.ndarray:
    d_km = np.maximum(np.asarray(distance_m, dtype=float), 1.0) / 1000.0
    return 42.6 + 26.0 * np.log10(d_km) + 20.0 * np.log10(carrier_mhz)


def compute_channel(
    distance_m: float | np.ndarray,
    rng: np.random.Generator | int | None = None,
    shadowing_std_db: float = 4.0,
    carrier_mhz: float = 2400.0,
) -> float | np.ndarray:
    """Channel gain in dB: minus (path loss + log-normal shadowing).

    Distances below 1 m are clamped to 1 m. ``rng=None`` gives the
    shadowing-free gain.
    """
    loss = pathloss_db(distance_m, carrier_mhz)
    if rng is not None:
        rng = np.random.default_rng(rng)
        loss = loss + rng.normal(0.0, shadowing_std_db, size=np.shape(loss))
    gain = -loss
    return float(gain) if np.ndim(gain) == 0 else gain


def greedy_coloring(conflict: Sequence[frozenset[int]]) -> tuple[int, ...]:
    """Greedy coloring, vertices by descending degree then ascending id."""
    order = sorted(range(len(conflict)), key=lambda n: (-len(conflict[n]), n))
    colors = [-1] * len(conflict)
    for n in order:
        used = {colors[j] for j in conflict[n] if colors[j] >= 0}
        c = 0
        while c in used:
            c += 1
        colors[n] = c
    return tuple(colors)


def build_topology(
    fn_positions: np.ndarray, sn_positions: np.ndarray, radius: float | Sequence[float]
) -> Topology:
    fn_positions = np.asarray(fn_positions, dtype=float).reshape(-1, 2)
    sn_positions = np.asarray(sn_positions, dtype=float).reshape(-1, 2)
    n_fn = len(fn_positions)
    radius = np.broadcast_to(np.asarray(radius, dtype=float), (n_fn,))
    dist = np.linalg.norm(sn_positions[:, None, :] - fn_positions[None, :, :], axis=2)
    reach = dist <= radius[None, :]
    fn_reach = tuple(tuple(int(m) for m in np.flatnonzero(reach[:, n])) for n in range(n_fn))
    sn_reach = tuple(tuple(int(n) for n in np.flatnonzero(row)) for row in reach)

    nbrs: list[set[int]] = [set() for _ in range(n_fn)]
    for fns in sn_reach:
        for i in fns:
            nbrs[i].update(j for j in fns if j != i)
    conflict = []
    for i in range(n_fn):
        two_hop = set(nbrs[i])
        for j in nbrs[i]:
            two_hop |= nbrs[j]
        two_hop.discard(i)
        conflict.append(frozenset(two_hop))
    conflict = tuple(conflict)
    return Topology(
        fn_reach=fn_reach,
        sn_reach=sn_reach,
        neighbors=tuple(frozenset(s) for s in nbrs),
        conflict=conflict,
        coloring=greedy_coloring(conflict),
        distance=dist,
    )


def mesh_positions(area_m: tuple[float, float], grid: tuple[int, int]) -> np.ndarray:
    """FN positions at the centres of a regular ``grid`` of cells."""
    (w, h), (gx, gy) = area_m, grid
    xs = (np.arange(gx) + 0.5) * w / gx
    ys = (np.arange(gy) + 0.5) * h / gy
    return np.array([(x, y) for y in ys for x in xs])


def _fog_nodes(config: ScenarioConfig, positions: np.ndarray) -> tuple[FogNodeSpec, ...]:
    return tuple(
        FogNodeSpec(
            id=n,
            position=(float(x), float(y)),
            cpu_freq=config.fn_cpu_hz,
            unit_energy=config.unit_energy_wh,
            static_energy=config.static_energy_wh,
            budget=config.budget_wh,
            energy_cap=config.budget_wh * config.energy_cap_factor,
            capacity=config.capacity,
            radius=config.radius_m,
        )
        for n, (x, y) in enumerate(positions)
    )


def generate_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Draw a reproducible instance.

    SNs are scattered uniformly with a Poisson-distributed count. A draw in
    which some SN reaches no FN (or with no SNs at all) is rejected and
    redrawn, up to ``config.max_retries`` times.
    """
    rng = np.random.default_rng([seed, _STREAM_SCENARIO])
    k = config.n_services
    catalog = ServiceCatalog(
        input_size=rng.uniform(*config.input_size_mb, size=k) * BITS_PER_MB,
        cpu_demand=rng.uniform(*config.cpu_demand_mcycles, size=k) * 1e6,
    )
    fn_pos = mesh_positions(config.area_m, config.fn_grid)
    for _ in range(config.max_retries):
        n_sn = int(rng.poisson(config.expected_sns))
        sn_pos = rng.uniform((0.0, 0.0), config.area_m, size=(n_sn, 2))
        types = rng.integers(0, k, size=n_sn)
        if n_sn == 0:
            continue
        topo = build_topology(fn_pos, sn_pos, config.radius_m)
        if all(topo.sn_reach):
            break
    else:
        raise ScenarioError(
            f"no valid SN placement in {config.max_retries} draws: "
            "some SN is out of every FN's radius (radius/density mismatch)"
        )
    sensors = tuple(
        SensorNodeSpec(id=m, position=(float(x), float(y)), service_type=int(types[m]))
        for m, (x, y) in enumerate(sn_pos)
    )
    return Scenario(
        config=config,
        catalog=catalog,
        fog_nodes=_fog_nodes(config, fn_pos),
        sensors=sensors,
        cloud=CloudSpec(cpu_freq=config.cloud_cpu_hz),
        topology=topo,
        seed=seed,
    )


generate_topology = generate_scenario


def scenario_from_positions(
    fn_positions: np.ndarray,
    sn_positions: np.ndarray,
    sn_types: Sequence[int],
    catalog: ServiceCatalog,
    config: ScenarioConfig | None = None,
    seed: int = 0,
) -> Scenario:
    """Hand-built instance; node parameters come from ``config`` defaults."""
    config = config or ScenarioConfig(n_services=catalog.n_services)
    fn_positions = np.asarray(fn_positions, dtype=float).reshape(-1, 2)
    sn_positions = np.asarray(sn_positions, dtype=float).reshape(-1, 2)
    topo = build_topology(fn_positions, sn_positions, config.radius_m)
    sensors = tuple(
        SensorNodeSpec(id=m, position=(float(p[0]), float(p[1])), service_type=int(k))
        for m, (p, k) in enumerate(zip(sn_positions, sn_types))
    )
    return Scenario(
        config=config,
        catalog=catalog,
        fog_nodes=_fog_nodes(config, fn_positions),
        sensors=sensors,
        cloud=CloudSpec(cpu_freq=config.cloud_cpu_hz),
        topology=topo,
        seed=seed,
    )


def _demand(scenario: Scenario, t: int, rng: np.random.Generator) -> np.ndarray:
    cfg = scenario.config
    lo, hi = cfg.demand_range
    m = scenario.n_sns
    if cfg.demand_mode == "uniform":
        return rng.uniform(lo, hi, size=m)
    phase = np.random.default_rng([scenario.seed, _STREAM_PHASE]).uniform(0, 2 * np.pi, size=m)
    mid, amp = (lo + hi) / 2, (hi - lo) / 2
    profile = mid + 0.8 * amp * np.sin(2 * np.pi * t / cfg.demand_period + phase)
    noise = rng.uniform(-0.2 * amp, 0.2 * amp, size=m)
    return np.clip(profile + noise, lo, hi)


def generate_slot(scenario: Scenario, t: int, seed: int) -> SlotContext:
    """Observables for slot ``t``; a pure function of ``(scenario, t, seed)``."""
    cfg = scenario.config
    rng = np.random.default_rng([seed, _STREAM_SLOT, t])
    demand = _demand(scenario, t, rng)
    backbone = rng.uniform(*cfg.backbone_mbps) * 1e6
    topo = scenario.topology
    if cfg.redraw_channels:
        shadow_rng = rng
    else:
        shadow_rng = np.random.default_rng([seed, _STREAM_FIXED_CHANNEL])
    gains = compute_channel(topo.distance, shadow_rng, cfg.shadowing_std_db, cfg.carrier_mhz)
    channel = np.full(topo.distance.shape, np.nan)
    for m, fns in enumerate(topo.sn_reach):
        idx = list(fns)
        channel[m, idx] = gains[m, idx]
    return SlotContext(t=t, demand=demand, backbone_bps=float(backbone), rtt_s=cfg.rtt_s, channel=channel)


def scenario_to_dict(scenario: Scenario) -> dict[str, Any]:
    return {
        "snapshot_version": SNAPSHOT_VERSION,
        "seed": scenario.seed,
        "config": scenario.config.to_dict(),
        "catalog": {
            "input_size_bits": scenario.catalog.input_size.tolist(),
            "cpu_demand_cycles": scenario.catalog.cpu_demand.tolist(),
        },
        "cloud": {"cpu_freq": scenario.cloud.cpu_freq},
        "fog_nodes": [dataclasses.asdict(f) for f in scenario.fog_nodes],
        "sensors": [dataclasses.asdict(s) for s in scenario.sensors],
    }


def scenario_from_dict(data: dict[str, Any]) -> Scenario:
    version = data.get("snapshot_version")
    if version != SNAPSHOT_VERSION:
        raise ScenarioError(f"unsupported snapshot version {version!r} (expected {SNAPSHOT_VERSION})")
    config = ScenarioConfig.from_dict(data["config"])
    fns = tuple(
        FogNodeSpec(**{**f, "position": tuple(f["position"])}) for f in data["fog_nodes"]
    )
    sensors = tuple(
        SensorNodeSpec(**{**s, "position": tuple(s["position"])}) for s in data["sensors"]
    )
    topo = build_topology(
        np.array([f.position for f in fns]).reshape(-1, 2),
        np.array([s.position for s in sensors]).reshape(-1, 2),
        [f.radius for f in fns],
    )
    catalog = ServiceCatalog(
        input_size=np.array(data["catalog"]["input_size_bits"], dtype=float),
        cpu_demand=np.array(data["catalog"]["cpu_demand_cycles"], dtype=float),
    )
    return Scenario(
        config=config,
        catalog=catalog,
        fog_nodes=fns,
        sensors=sensors,
        cloud=CloudSpec(**data["cloud"]),
        topology=topo,
        seed=int(data["seed"]),
    )


def save_snapshot(scenario: Scenario, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_snapshot(path: str) -> Scenario:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def describe(scenario: Scenario) -> str:
    topo = scenario.topology
    cover = [len(r) for r in topo.sn_reach]
    lines = [
        f"seed            {scenario.seed}",
        f"fog nodes       {scenario.n_fns}",
        f"sensor nodes    {scenario.n_sns}",
        f"services        {scenario.n_services} (capacity {scenario.config.capacity})",
        f"fog edges       {len(topo.edges())}",
        f"conflict edges  {len(topo.conflict_edges())}",
        f"colors (L)      {topo.n_colors}",
        f"FNs per SN      min {min(cover)} / mean {np.mean(cover):.2f} / max {max(cover)}",
        f"budget Q (Wh)   {scenario.budget.tolist()}",
    ]
    return "\n".join(lines)


def desk_config(**changes: Any) -> ScenarioConfig:
    """The 9-FN CI-scale scenario (same FN spacing as the 16-FN mesh).

    Static energy is raised to 2 Wh so the budget binds at this lighter load.
    """
    base = ScenarioConfig(area_m=(375.0, 375.0), fn_grid=(3, 3), expected_sns=20.0, static_energy_wh=2.0)
    return base.replace(**changes) if changes else base

