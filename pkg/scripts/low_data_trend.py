"""Scaled return of EDM, BC and RCAL against the number of demonstration trajectories.

Writes one CSV row per (algo, n_traj, seed) cell and prints per-cell means with
standard errors. The full default grid (3 algos x 5 sizes x 20 seeds) takes
a few hours on one core; use --seeds / --traj-counts / --iterations to shrink it.

    python scripts/low_data_trend.py --out trend.csv --seeds 5 --traj-counts 1 15
"""

import argparse
import sys

import numpy as np

from edmil import experiment as ex
from edmil.config import load_config, merge_config
from edmil.evaluation import write_reports_csv


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--out", default="trend.csv")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--traj-counts", type=int, nargs="+", default=[1, 3, 7, 10, 15])
    p.add_argument("--algos", nargs="+", default=["edm", "bc", "rcal"])
    p.add_argument("--iterations", type=int)
    p.add_argument("--state-only-multiple", type=int, default=0,
                   help="extra state-only trajectories per demonstration trajectory (edm only)")
    args = p.parse_args(argv)

    flags = {"iterations": args.iterations} if args.iterations else {}
    flags["state_only_multiple"] = args.state_only_multiple
    cfg = load_config(args.config, flags) if args.config else merge_config(None, flags)
    env = ex.build_env(cfg)
    table = ex.expert_table(cfg, env)[0] if hasattr(env, "transition") else None

    reports, cache = [], {}
    for n in args.traj_counts:
        for algo in args.algos:
            vals = []
            for seed in range(args.seeds):
                report, _ = ex.run_cell(cfg, algo, n, seed, env=env, table=table, data_cache=cache)
                reports.append(report)
                vals.append(report.scaled_return)
            se = np.std(vals, ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
            print(f"n_traj={n:2d} {algo:5s} scaled return {np.mean(vals):.4f} +- {se:.4f}", flush=True)
    reports.sort(key=lambda r: (r.tags["algo"], r.tags["n_traj"], r.tags["seed"]))
    write_reports_csv(args.out, reports)
    return 0


if __name__ == "__main__":
    sys.exit(main())
