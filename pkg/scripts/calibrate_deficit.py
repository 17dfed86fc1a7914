"""Terminal deficit of AFC and D-optimal against the total budget, per static energy.

Shows how far the time-average deficit sits from zero at a finite horizon.

    python scripts/calibrate_deficit.py --seed 0 --T 2000 --V 1000 --static 1 1.5 2
"""

import argparse
import time

from fogafc.baselines import make_strategy
from fogafc.lyapunov import ControllerConfig, simulate
from fogafc.scenario import desk_config, generate_scenario
from fogafc.solver import AnnealSchedule


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--T", type=int, default=2000)
    p.add_argument("--V", type=float, default=1000.0)
    p.add_argument("--static", type=float, nargs="+", default=[1.0, 1.5, 2.0])
    args = p.parse_args()

    ctrl = ControllerConfig(V=args.V, horizon=args.T)
    print("static_Wh strategy deficit_pct mean_final_queue delay_s seconds")
    for e0 in args.static:
        sc = generate_scenario(desk_config(static_energy_wh=e0), args.seed)
        for name in ("afc", "dopt"):
            t0 = time.time()
            tr = simulate(sc, make_strategy(name, AnnealSchedule.fast(), warm_start=True), ctrl, args.seed)
            s = tr.summary()
            pct = 100 * s["time_avg_deficit_Wh"] / s["budget_total_Wh"]
            print(f"{e0:9.2f} {name:8s} {pct:11.2f} {tr.queue[-1].mean():16.1f} {s['time_avg_delay_s']:7.2f} {time.time() - t0:7.1f}")


if __name__ == "__main__":
    main()
