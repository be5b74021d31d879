"""End-to-end cells: expert -> demonstrations -> training -> evaluation."""

from dataclasses import replace

import numpy as np

from .config import env_spec
from .data import DemoDataset, generate_demonstrations, strip_actions
from .edm import PcdBuffer, SgldConfig, TrainConfig, train
from .env import ContinuousEnv, TabularMdp, cartpole_expert, env_from_spec, rollout
from .errors import ContractError
from .evaluation import EvalReport, action_matching_metrics, average_return, scaled_return
from .policy import TablePolicy
from .solver import soft_policy_from_q, soft_value_iteration


def build_env(cfg):
    return env_from_spec(env_spec(cfg))


def expert_table(cfg, env):
    """Soft-optimal policy table for a tabular env."""
    q = soft_value_iteration(env, tol=1e-10, temperature=cfg.temperature)
    return soft_policy_from_q(q), q


def expert_rule(cfg, env, table=None):
    if isinstance(env, TabularMdp):
        if table is None:
            table, _ = expert_table(cfg, env)
        return TablePolicy(table)
    return cartpole_expert


def negative_phase_for(cfg, env):
    if cfg.negative_phase == "auto":
        return "exact" if isinstance(env, TabularMdp) else "sgld"
    if cfg.negative_phase == "exact" and isinstance(env, ContinuousEnv):
        raise ContractError("exact negative phase needs a finite state set; use sgld for continuous envs")
    return cfg.negative_phase


def train_config(cfg, env, algo=None, seed=None):
    return TrainConfig(
        batch_size=cfg.batch_size, iterations=cfg.iterations, lr=cfg.lr,
        seed=cfg.seed if seed is None else seed, algo=algo or cfg.algo,
        rcal_lambda=cfg.rcal_lambda, negative_phase=negative_phase_for(cfg, env),
        hidden=tuple(cfg.hidden), activation=cfg.activation, log_every=cfg.log_every,
        checkpoint_every=cfg.checkpoint_every)


def sgld_config(cfg):
    return SgldConfig(cfg.sgld_step, cfg.sgld_noise, cfg.sgld_steps, cfg.sgld_clamp)


def make_buffer(cfg):
    return PcdBuffer(cfg.buffer_size, cfg.reinit_prob)


def heldout_dataset(env, expert, n_traj, seed, like):
    trajs = rollout(env, expert, n_traj, seed=seed, label="heldout")
    header = replace(like.header, n_trajectories=len(trajs),
                     episode_returns=tuple(t.ret for t in trajs))
    return DemoDataset(header, trajs)


def state_only_states(env, expert, n, seed):
    """States from ``n`` extra expert episodes with the actions thrown away."""
    trajs = rollout(env, expert, n, seed=seed, label="state-only")
    rows = [t.state for traj in trajs for t in traj.transitions]
    return np.array(rows) if rows else np.zeros((0, env.state_dim))


def fit(cfg, env, dataset, algo, seed, state_only=None, checkpoint_dir=None):
    tc = train_config(cfg, env, algo, seed)
    if checkpoint_dir is not None:
        tc = replace(tc, checkpoint_dir=str(checkpoint_dir))
    feature_set = env.feature_matrix() if isinstance(env, TabularMdp) else None
    return train(dataset, tc, sgld=sgld_config(cfg), buffer=make_buffer(cfg),
                 feature_set=feature_set, state_only=state_only)


def evaluate(cfg, env, net, dataset, heldout=None, seed=0, tags=None):
    raw, se = average_return(net, env, cfg.eval_episodes, seed=seed)
    report = EvalReport(raw_return=raw, stderr=se, scaled_return=scaled_return(raw, dataset.header),
                        n_episodes=cfg.eval_episodes, seeds=(seed,), tags=dict(tags or {}))
    if heldout is not None and len(heldout):
        report.acc, report.auc, report.apr = action_matching_metrics(net, heldout)
    return report


def run_cell(cfg, algo, n_traj, seed, env=None, table=None, data_cache=None):
    """Train ``algo`` on ``n_traj`` fresh demonstrations drawn with ``seed``; return an EvalReport."""
    env = env or build_env(cfg)
    expert = expert_rule(cfg, env, table)
    key = (n_traj, seed)
    if data_cache is not None and key in data_cache:
        dataset, heldout = data_cache[key]
    else:
        dataset = generate_demonstrations(env, expert, n_traj, seed, reference_episodes=cfg.reference_episodes)
        heldout = heldout_dataset(env, expert, cfg.heldout_traj, seed, dataset)
        if data_cache is not None:
            data_cache[key] = (dataset, heldout)
    extra = None
    if algo == "edm" and cfg.state_only_multiple > 0:
        extra = state_only_states(env, expert, n_traj * cfg.state_only_multiple, seed)
    result = fit(cfg, env, dataset, algo, seed, state_only=extra)
    tags = {"algo": algo, "env": env.name, "n_traj": n_traj, "seed": seed}
    return evaluate(cfg, env, result.net, dataset, heldout, seed=seed, tags=tags), result


def strip_for_state_only(dataset):
    return strip_actions(dataset)
