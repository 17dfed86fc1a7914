"""Experiment presets, config files and on-disk artifacts.

Config files are YAML with four optional sections::

    schema_version: 1
    scenario:   {fn_grid: [3, 3], area_m: [375, 375], expected_sns: 20, ...}
    controller: {V: 1000, horizon: 500, d_max: null}
    anneal:     {rho: 0.95, sigma_min_ratio: 0.001, max_sweeps: 200, ...}
    experiment: {strategies: [afc, dopt, ncop, ssc], V_grid: [...], C_grid: [...], solver: cpgs, warm_start: false}

Every run writes one trace CSV; a ``manifest.json`` lists them with the
config hash, seed and schema versions.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import yaml

from fogafc import solver as solvers
from fogafc.baselines import STRATEGIES, make_strategy
from fogafc.lyapunov import TRACE_SCHEMA, ControllerConfig, MetricsTrace, simulate
from fogafc.scenario import SNAPSHOT_VERSION, ScenarioConfig, ScenarioError, generate_scenario, generate_slot
from fogafc.solver import AnnealSchedule, SlotProblem

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
MANIFEST_SCHEMA = "fogafc-manifest/1"
PRESETS = ("runtime_comparison", "demand_allocation", "v_sweep", "capacity_sweep", "convergence")


class ConfigError(ValueError):
    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class ExperimentSettings:
    strategies: tuple[str, ...] = STRATEGIES
    V_grid: tuple[float, ...] = (10.0, 100.0, 1000.0, 10000.0)
    C_grid: tuple[int, ...] = (1, 2, 3, 4)
    solver: str = "cpgs"
    warm_start: bool = False  # seed each slot's sampler with the previous slot's profile


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "scenario": self.scenario.to_dict(),
            "controller": dataclasses.asdict(self.controller),
            "anneal": dataclasses.asdict(self.anneal),
            "experiment": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self.experiment).items()},
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _check_value(default: Any, value: Any) -> str | None:
    """Type problem of one field value, judged against the field default."""
    if isinstance(default, bool):
        return None if isinstance(value, bool) else "expected true/false"
    if default is None or isinstance(default, (int, float)):
        if value is None and default is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return f"expected a number, got {value!r}"
        if isinstance(default, int) and not isinstance(default, bool) and value != int(value):
            return f"expected an integer, got {value!r}"
        return None
    if isinstance(default, str):
        return None if isinstance(value, str) else f"expected a string, got {value!r}"
    if isinstance(default, tuple):
        return None if isinstance(value, (list, tuple)) else "expected a list"
    return None


def _section(cls, data: Any, section: str, problems: list[str]):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        problems.append(f"{section}: expected a mapping")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in sorted(set(data) - set(fields)):
        problems.append(f"{section}.{key}: unknown field")
    kwargs = {}
    bad = False
    for key, value in data.items():
        if key not in fields:
            continue
        problem = _check_value(fields[key].default, value)
        if problem:
            problems.append(f"{section}.{key}: {problem}")
            bad = True
            continue
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    if bad:
        return cls()
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        problems.append(f"{section}: {exc}")
        return cls()


def parse_config(data: dict[str, Any] | None) -> RunConfig:
    """Validate a config mapping; collects every problem before raising."""
    data = data or {}
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a mapping"])
    version = data.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        problems.append(f"schema_version: unsupported {version!r} (expected {CONFIG_SCHEMA_VERSION})")
    for key in sorted(set(data) - {"schema_version", "scenario", "controller", "anneal", "experiment"}):
        problems.append(f"{key}: unknown section")
    try:
        scenario = ScenarioConfig.from_dict(data.get("scenario") or {})
    except ScenarioError as exc:
        problems.extend(f"scenario.{p.strip()}" for p in str(exc).split(";"))
        scenario = ScenarioConfig()
    controller = _section(ControllerConfig, data.get("controller"), "controller", problems)
    anneal = _section(AnnealSchedule, data.get("anneal"), "anneal", problems)
    experiment = _section(ExperimentSettings, data.get("experiment"), "experiment", problems)
    for s in experiment.strategies:
        if s not in STRATEGIES:
            problems.append(f"experiment.strategies: unknown strategy {s!r}")
    if experiment.solver not in ("cpgs", "sequential", "brute"):
        problems.append(f"experiment.solver: unknown solver {experiment.solver!r}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(scenario, controller, anneal, experiment)


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    return parse_config(data)


@dataclass(frozen=True)
class RunSpec:
    strategy: str
    seed: int
    V: float
    C: int
    T: int

    @property
    def stem(self) -> str:
        return f"{self.strategy}_V{self.V:g}_C{self.C}_T{self.T}_s{self.seed}"


@dataclass(frozen=True)
class ExperimentPreset:
    name: str
    runs: tuple[RunSpec, ...]
    seeds: tuple[int, ...]
    out_dir: str


def build_preset(
    name: str,
    cfg: RunConfig,
    seeds: Sequence[int],
    out_dir: str,
    strategies: Sequence[str] | None = None,
    V: float | None = None,
    C: int | None = None,
    T: int | None = None,
) -> ExperimentPreset:
    if name not in PRESETS:
        raise ConfigError([f"preset: unknown {name!r}; choose from {', '.join(PRESETS)}"])
    exp = cfg.experiment
    V0 = V if V is not None else cfg.controller.V
    C0 = C if C is not None else cfg.scenario.capacity
    T0 = T if T is not None else cfg.controller.horizon
    strategies = tuple(strategies) if strategies else None
    runs: list[RunSpec] = []
    for seed in seeds:
        if name == "runtime_comparison":
            runs += [RunSpec(s, seed, V0, C0, T0) for s in strategies or exp.strategies]
        elif name == "demand_allocation":
            runs += [RunSpec(s, seed, V0, C0, T if T is not None else 20) for s in strategies or ("afc", "ncop")]
        elif name == "v_sweep":
            vs = (V,) if V is not None else exp.V_grid
            runs += [RunSpec(s, seed, v, C0, T0) for s in strategies or ("afc",) for v in vs]
        elif name == "capacity_sweep":
            cs = (C,) if C is not None else exp.C_grid
            runs += [RunSpec(s, seed, V0, c, T0) for s in strategies or ("afc", "ncop") for c in cs]
        elif name == "convergence":
            runs += [RunSpec(s, seed, V0, C0, 1) for s in ("cpgs", "sequential")]
    return ExperimentPreset(name, tuple(runs), tuple(seeds), out_dir)


def _run_convergence(spec: RunSpec, cfg: RunConfig, path: str) -> dict[str, Any]:
    scenario = generate_scenario(cfg.scenario.replace(capacity=spec.C), spec.seed)
    ctx = generate_slot(scenario, 0, spec.seed)
    problem = SlotProblem(scenario, ctx, np.zeros(scenario.n_fns), spec.V, delay_cap=cfg.controller.d_max)
    run = solvers.cpgs if spec.strategy == "cpgs" else solvers.sequential_gibbs
    res = run(problem, cfg.anneal, spec.seed, record=True)
    solvers.write_trace(res.trace, path)
    return {
        "objective": res.objective,
        "sweeps": res.sweeps,
        "rounds": res.rounds,
        "rounds_to_plateau": solvers.rounds_to_plateau(res.trace),
        "n_colors": scenario.topology.n_colors,
        "n_fns": scenario.n_fns,
    }


def run_preset(preset: ExperimentPreset, cfg: RunConfig) -> dict[str, Any]:
    """Execute every run of ``preset`` and write CSVs plus ``manifest.json``."""
    os.makedirs(preset.out_dir, exist_ok=True)
    chash = cfg.hash()
    entries = []
    complete = True
    for spec in preset.runs:
        fname = f"{preset.name}__{spec.stem}.csv"
        path = os.path.join(preset.out_dir, fname)
        log.info("running %s", fname)
        entry: dict[str, Any] = {"file": fname, "config_hash": chash, **dataclasses.asdict(spec)}
        if preset.name == "convergence":
            entry["result"] = _run_convergence(spec, cfg, path)
            entry["complete"] = True
        else:
            scenario = generate_scenario(cfg.scenario.replace(capacity=spec.C), spec.seed)
            ctrl = dataclasses.replace(cfg.controller, V=spec.V, horizon=spec.T)
            strategy = make_strategy(spec.strategy, cfg.anneal, cfg.experiment.solver, cfg.experiment.warm_start)
            trace = simulate(scenario, strategy, ctrl, spec.seed)
            trace.write_csv(path)
            entry["complete"] = trace.complete
            entry["summary"] = trace.summary()
        entries.append(entry)
        if not entry["complete"]:
            complete = False
            break
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "trace_schema": TRACE_SCHEMA,
        "scenario_snapshot_version": SNAPSHOT_VERSION,
        "preset": preset.name,
        "seeds": list(preset.seeds),
        "config_hash": chash,
        "config": cfg.to_dict(),
        "complete": complete,
        "runs": entries,
    }
    with open(os.path.join(preset.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def summarize(paths: Sequence[str], labels: Sequence[str] | None = None) -> tuple[str, str]:
    """Align time-average curves across traces.

    Returns ``(curves_csv, summary_csv)`` as text. All traces must carry the
    same schema version; curves are truncated to the shortest horizon.
    """
    traces = [MetricsTrace.read_csv(p) for p in paths]
    schemas = {t.meta.get("schema") for t in traces}
    if len(schemas) != 1:
        raise ValueError(f"mixed trace schema versions: {sorted(map(str, schemas))}")
    if labels is None:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    T = min(t.horizon for t in traces)
    header = ["t"]
    cols = []
    for label, tr in zip(labels, traces):
        header += [f"{label}:avg_delay_s", f"{label}:avg_deficit_Wh", f"{label}:fog_demand", f"{label}:cloud_demand"]
        cols += [tr.running_delay()[:T], tr.running_deficit()[:T], tr.fog_demand[:T], tr.cloud_demand[:T]]
    lines = [",".join(header)]
    for t in range(T):
        lines.append(",".join([str(t)] + [repr(float(c[t])) for c in cols]))
    curves = "\n".join(lines) + "\n"

    s_lines = ["label,strategy,V,horizon,time_avg_delay_s,time_avg_deficit_Wh,fog_share"]
    for label, tr in zip(labels, traces):
        s = tr.summary()
        s_lines.append(
            f"{label},{tr.strategy},{tr.V!r},{tr.horizon},{s['time_avg_delay_s']!r},{s['time_avg_deficit_Wh']!r},{s['fog_share']!r}"
        )
    return curves, "\n".join(s_lines) + "\n"
