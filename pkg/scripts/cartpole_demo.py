"""Cart-pole with the SGLD negative phase: linear-controller demos, EDM vs BC.

    python scripts/cartpole_demo.py --n-traj 1 --iterations 2000
"""

import argparse
import sys

from edmil import experiment as ex
from edmil.config import merge_config
from edmil.data import generate_demonstrations


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n-traj", type=int, default=1)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=50)
    args = p.parse_args(argv)

    cfg = merge_config(None, {"env": "cartpole", "iterations": args.iterations, "seed": args.seed,
                              "eval_episodes": args.episodes, "reference_episodes": 100})
    env = ex.build_env(cfg)
    expert = ex.expert_rule(cfg, env)
    data = generate_demonstrations(env, expert, args.n_traj, args.seed, reference_episodes=cfg.reference_episodes)
    h = data.header
    print(f"{len(data)} transitions; demonstrator return {h.demo_return:.1f}, random {h.random_return:.1f}")
    for algo in ("edm", "bc"):
        result = ex.fit(cfg, env, data, algo, args.seed)
        report = ex.evaluate(cfg, env, result.net, data, seed=args.seed)
        extra = f", {result.stats.uniform_starts} uniform chain starts" if algo == "edm" else ""
        print(f"{algo}: return {report.raw_return:.1f} +- {report.stderr:.1f}, "
              f"scaled {report.scaled_return:.3f}{extra}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
