"""Command-line front end.

    edmil expert --out DIR                  soft-optimal expert for the configured env
    edmil demos  --expert DIR --out DIR     demonstration datasets per trajectory count
    edmil train  --data PREFIX --out DIR    fit edm / bc / rcal
    edmil eval   --checkpoint FILE --data PREFIX
    edmil sweep  --out FILE.csv             algos x trajectory counts x seeds

Every subcommand takes ``--config FILE`` and ``--set key=value`` overrides.
Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import experiment as ex
from .config import config_keys, load_config, merge_config
from .data import load_dataset, save_dataset, strip_actions
from .edm import write_log_csv
from .env import TabularMdp, export_mdp
from .errors import (ContractError, ConvergenceError, DimensionError, NonFiniteError, ParseError,
                     ScalingError, TriplesRequiredError)
from .evaluation import write_reports_csv
from .policy import TablePolicy, load_policy, save_policy
from .solver import exact_occupancy, read_table_csv, write_table_csv

log = logging.getLogger("edmil")

RUNTIME_ERRORS = (ContractError, ConvergenceError, DimensionError, NonFiniteError, ParseError,
                  ScalingError, TriplesRequiredError, OSError, KeyError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.add_argument("--seed", type=int)


def build_parser():
    parser = _Parser(prog="edmil", description="Strictly-batch imitation learning toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("expert", help="solve the configured env and save the soft-optimal policy")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("demos", help="generate and save demonstration datasets")
    _common(p)
    p.add_argument("--expert", help="directory written by 'expert' (tabular envs)")
    p.add_argument("--n-traj", type=int, nargs="+")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a policy on a saved dataset")
    _common(p)
    p.add_argument("--data", required=True, help="dataset prefix")
    p.add_argument("--algo", choices=("edm", "bc", "rcal"))
    p.add_argument("--state-only", metavar="PREFIX", help="dataset whose states are used without actions")
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset prefix holding reference returns")
    p.add_argument("--heldout", help="dataset prefix for action matching")
    p.add_argument("--algo", default="")
    p.add_argument("--episodes", type=int)
    p.add_argument("--out", help="CSV file (default: stdout)")

    p = sub.add_parser("sweep", help="algos x trajectory counts x seeds into one CSV")
    _common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def _flag_values(args):
    flags = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        flags[k.strip()] = v.strip()
    for attr, key in (("seed", "seed"), ("algo", "algo"), ("iterations", "iterations"),
                      ("episodes", "eval_episodes")):
        val = getattr(args, attr, None)
        if val not in (None, ""):
            flags[key] = val
    unknown = set(flags) - set(config_keys())
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return flags


def _config(args):
    flags = _flag_values(args)
    if args.config:
        return load_config(args.config, flags)
    return merge_config(None, flags)


def cmd_expert(cfg, args):
    env = ex.build_env(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not isinstance(env, TabularMdp):
        (out / "expert.txt").write_text("builtin cartpole linear controller\n")
        return 0
    table, q = ex.expert_table(cfg, env)
    write_table_csv(out / "expert_policy.csv", table, "probability")
    write_table_csv(out / "q_table.csv", q.q, "q")
    occ = exact_occupancy(env, table)
    write_table_csv(out / "occupancy.csv", occ.state_action, "occupancy")
    export_mdp(env, out / "mdp.txt")
    print(f"expert written to {out} (residual {q.residual:.2e}, {q.iterations} iterations)")
    return 0


def _expert_for(cfg, env, expert_dir):
    if isinstance(env, TabularMdp):
        if expert_dir:
            return TablePolicy(read_table_csv(Path(expert_dir) / "expert_policy.csv"))
        return ex.expert_rule(cfg, env)
    return ex.expert_rule(cfg, env)


def cmd_demos(cfg, args):
    from .data import generate_demonstrations

    env = ex.build_env(cfg)
    expert = _expert_for(cfg, env, args.expert)
    out = Path(args.out)
    for n in args.n_traj or cfg.traj_counts:
        ds = generate_demonstrations(env, expert, n, cfg.seed, reference_episodes=cfg.reference_episodes)
        prefix = out / f"{env.name}_n{n}_s{cfg.seed}"
        save_dataset(ds, prefix)
        print(prefix)
    held = ex.heldout_dataset(env, expert, cfg.heldout_traj, cfg.seed, ds)
    save_dataset(held, out / f"{env.name}_heldout_s{cfg.seed}")
    return 0


def cmd_train(cfg, args):
    env = ex.build_env(cfg)
    dataset = load_dataset(args.data)
    if dataset.header.state_dim != env.state_dim:
        raise DimensionError(f"dataset has {dataset.header.state_dim} features, env {env.state_dim}")
    extra = strip_actions(load_dataset(args.state_only)) if args.state_only else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints" if cfg.checkpoint_every else None
    result = ex.fit(cfg, env, dataset, cfg.algo, cfg.seed, state_only=extra, checkpoint_dir=ckpt_dir)
    save_policy(out / "model.ckpt", result.net, {"algo": cfg.algo, "seed": cfg.seed})
    write_log_csv(out / "train_log.csv", result.log)
    print(out / "model.ckpt")
    return 0


def cmd_eval(cfg, args):
    env = ex.build_env(cfg)
    net, meta = load_policy(args.checkpoint)
    dataset = load_dataset(args.data)
    heldout = load_dataset(args.heldout) if args.heldout else None
    tags = {"algo": args.algo or meta.get("algo", ""), "env": env.name,
            "n_traj": dataset.header.n_trajectories, "seed": cfg.seed}
    report = ex.evaluate(cfg, env, net, dataset, heldout, seed=cfg.seed, tags=tags)
    if args.out:
        write_reports_csv(args.out, [report])
    else:
        write_reports_csv(sys.stdout, [report])
    return 0


def _sweep_cell(payload):
    cfg, algo, n_traj, seed = payload
    report, _ = ex.run_cell(cfg, algo, n_traj, seed)
    return report


def cmd_sweep(cfg, args):
    cells = [(a, n, s) for a in cfg.algos for n in cfg.traj_counts for s in cfg.seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            reports = list(pool.map(_sweep_cell, [(cfg, a, n, s) for a, n, s in cells]))
    else:
        env = ex.build_env(cfg)
        table = ex.expert_table(cfg, env)[0] if isinstance(env, TabularMdp) else None
        cache, reports = {}, []
        for a, n, s in cells:
            log.info("cell algo=%s n_traj=%d seed=%d", a, n, s)
            reports.append(ex.run_cell(cfg, a, n, s, env=env, table=table, data_cache=cache)[0])
    reports.sort(key=lambda r: (r.tags["algo"], r.tags["n_traj"], r.tags["seed"]))
    write_reports_csv(args.out, reports)
    print(args.out)
    return 0


COMMANDS = {"expert": cmd_expert, "demos": cmd_demos, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("edmil: a subcommand is required")
        cfg = _config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except RUNTIME_ERRORS as exc:
        print(f"edmil: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, ContractError) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](cfg, args)
    except RUNTIME_ERRORS as exc:
        print(f"edmil: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
