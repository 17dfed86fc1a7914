"""Command-line entry point: ``fogafc {run,summarize,scenario}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from fogafc import harness
from fogafc.baselines import STRATEGIES
from fogafc.scenario import ScenarioError, describe, generate_scenario, load_snapshot, save_snapshot


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fogafc", description="Adaptive fog configuration experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment preset")
    run.add_argument("--preset", required=True, choices=harness.PRESETS)
    run.add_argument("--config", help="YAML config file (defaults: the 16-FN mesh)")
    run.add_argument("--seeds", type=int, nargs="+", default=[0])
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--strategy", nargs="+", choices=STRATEGIES, help="override the preset's strategies")
    run.add_argument("--V", type=float, help="override V (fixes a single V in v_sweep)")
    run.add_argument("--C", type=int, help="override hosting capacity (fixes a single C in capacity_sweep)")
    run.add_argument("--T", type=int, help="override the horizon")

    summ = sub.add_parser("summarize", help="align trace CSVs into comparison tables")
    summ.add_argument("traces", nargs="+")
    summ.add_argument("--out", required=True, help="curves CSV path; a *_summary.csv is written next to it")

    scen = sub.add_parser("scenario", help="generate or inspect scenario snapshots")
    scen_sub = scen.add_subparsers(dest="scenario_command", required=True)
    gen = scen_sub.add_parser("gen")
    gen.add_argument("--config")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    show = scen_sub.add_parser("show")
    show.add_argument("snapshot")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = harness.load_config(args.config)
            preset = harness.build_preset(
                args.preset, cfg, args.seeds, args.out, strategies=args.strategy, V=args.V, C=args.C, T=args.T
            )
            manifest = harness.run_preset(preset, cfg)
            print(f"{len(manifest['runs'])} run(s) written to {args.out}")
            return 0 if manifest["complete"] else 130
        if args.command == "summarize":
            curves, summary = harness.summarize(args.traces)
            with open(args.out, "w") as fh:
                fh.write(curves)
            root, ext = os.path.splitext(args.out)
            with open(f"{root}_summary{ext or '.csv'}", "w") as fh:
                fh.write(summary)
            return 0
        if args.scenario_command == "gen":
            cfg = harness.load_config(args.config)
            save_snapshot(generate_scenario(cfg.scenario, args.seed), args.out)
            return 0
        print(describe(load_snapshot(args.snapshot)))
        return 0
    except harness.ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 2
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
