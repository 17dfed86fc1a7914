"""Run every experiment preset for a config and write summary tables.

    python scripts/run_all_presets.py --config configs/desk.yaml --seeds 0 1 2 --out runs/desk
"""

import argparse
import os

from fogafc import harness


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/desk.yaml")
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--out", default="runs")
    p.add_argument("--T", type=int, help="override the horizon")
    args = p.parse_args()

    cfg = harness.load_config(args.config)
    for name in harness.PRESETS:
        out = os.path.join(args.out, name)
        preset = harness.build_preset(name, cfg, args.seeds, out, T=args.T)
        manifest = harness.run_preset(preset, cfg)
        print(f"{name}: {len(manifest['runs'])} run(s) -> {out}")
        traces = [os.path.join(out, r["file"]) for r in manifest["runs"]]
        if traces and name != "convergence":
            curves, summary = harness.summarize(traces)
            with open(os.path.join(out, "curves.csv"), "w") as fh:
                fh.write(curves)
            with open(os.path.join(out, "summary.csv"), "w") as fh:
                fh.write(summary)


if __name__ == "__main__":
    main()
