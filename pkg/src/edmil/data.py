"""Demonstration datasets and their on-disk format.

A dataset lives in two files sharing a prefix:

``<prefix>.header``
    ``key = value`` lines (see :class:`DatasetHeader`).
``<prefix>.transitions``
    one comma-separated record per transition:
    ``episode_id, t, state..., action, next_state..., done``.
    The ``next_state`` block is omitted when the header says
    ``has_next_state = false``. Reals are written with 17 significant digits.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import parse_kv
from .env import Trajectory, Transition, rollout
from .errors import ParseError
from .policy import uniform_policy

FORMAT_VERSION = 1
REFERENCE_EPISODES = 1000


@dataclass
class DatasetHeader:
    env: str
    state_dim: int
    n_actions: int
    gamma: float
    n_trajectories: int
    demonstrator: str = "expert"
    demo_return: float = float("nan")
    random_return: float = float("nan")
    seed: int = 0
    has_next_state: bool = True
    episode_returns: tuple = ()
    version: int = FORMAT_VERSION


@dataclass
class DemoDataset:
    header: DatasetHeader
    trajectories: list = field(default_factory=list)

    def transitions(self):
        return [tr for traj in self.trajectories for tr in traj.transitions]

    def __len__(self):
        return sum(len(t) for t in self.trajectories)

    def arrays(self):
        """``(states, actions, next_states or None, done)`` stacked over all transitions."""
        trs = self.transitions()
        d = self.header.state_dim
        if not trs:
            return np.zeros((0, d)), np.zeros(0, dtype=np.int64), None, np.zeros(0, dtype=bool)
        states = np.array([t.state for t in trs], dtype=np.float64)
        actions = np.array([t.action for t in trs], dtype=np.int64)
        done = np.array([t.done for t in trs], dtype=bool)
        nxt = None
        if self.header.has_next_state:
            nxt = np.array([t.next_state for t in trs], dtype=np.float64)
        return states, actions, nxt, done


def generate_demonstrations(env, expert, n_traj, seed, demonstrator="expert",
                            reference_episodes=REFERENCE_EPISODES):
    """Roll out ``expert`` for ``n_traj`` episodes and bake reference returns into the header."""
    trajs = rollout(env, expert, n_traj, seed=seed, label="demos")
    demo_ref = np.mean([t.ret for t in rollout(env, expert, reference_episodes, seed=seed, label="demo-ref")])
    rand = uniform_policy(env.n_actions)
    rand_ref = np.mean([t.ret for t in rollout(env, rand, reference_episodes, seed=seed, label="random-ref")])
    header = DatasetHeader(
        env=env.name, state_dim=int(env.state_dim), n_actions=int(env.n_actions),
        gamma=float(env.gamma), n_trajectories=len(trajs), demonstrator=demonstrator,
        demo_return=float(demo_ref), random_return=float(rand_ref), seed=int(seed),
        episode_returns=tuple(float(t.ret) for t in trajs))
    return DemoDataset(header, trajs)


def drop_next_states(ds):
    """Pair-only copy of ``ds``."""
    trajs = [Trajectory([replace(t, next_state=None) for t in traj.transitions], traj.ret, traj.seed)
             for traj in ds.trajectories]
    return DemoDataset(replace(ds.header, has_next_state=False), trajs)


def strip_actions(ds):
    """State vectors of every transition, in order."""
    trs = ds.transitions()
    if not trs:
        return np.zeros((0, ds.header.state_dim))
    return np.array([t.state for t in trs], dtype=np.float64)


def split_dataset(ds, n_first):
    """Split by trajectory: the first ``n_first`` trajectories, then the rest."""
    a, b = ds.trajectories[:n_first], ds.trajectories[n_first:]
    ha = replace(ds.header, n_trajectories=len(a), episode_returns=ds.header.episode_returns[:n_first])
    hb = replace(ds.header, n_trajectories=len(b), episode_returns=ds.header.episode_returns[n_first:])
    return DemoDataset(ha, list(a)), DemoDataset(hb, list(b))


# serialization


def _fmt(x):
    return "%.17g" % x


def _header_lines(h, n_transitions):
    return [
        f"format_version = {h.version}",
        f"env = {h.env}",
        f"state_dim = {h.state_dim}",
        f"n_actions = {h.n_actions}",
        f"gamma = {_fmt(h.gamma)}",
        f"n_trajectories = {h.n_trajectories}",
        f"n_transitions = {n_transitions}",
        f"has_next_state = {'true' if h.has_next_state else 'false'}",
        f"demonstrator = {h.demonstrator}",
        f"demo_return = {_fmt(h.demo_return)}",
        f"random_return = {_fmt(h.random_return)}",
        f"seed = {h.seed}",
        "episode_returns = " + ",".join(_fmt(r) for r in h.episode_returns),
    ]


def save_dataset(ds, prefix):
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    h = ds.header
    rows = []
    for ep, traj in enumerate(ds.trajectories):
        for t, tr in enumerate(traj.transitions):
            fields = [str(ep), str(t), *map(_fmt, tr.state), str(int(tr.action))]
            if h.has_next_state:
                fields += map(_fmt, tr.next_state)
            fields.append("1" if tr.done else "0")
            rows.append(",".join(fields))
    Path(f"{prefix}.header").write_text("\n".join(_header_lines(h, len(rows))) + "\n")
    Path(f"{prefix}.transitions").write_text("".join(r + "\n" for r in rows))


def _parse_header(text, source):
    kv = parse_kv(text, source)
    try:
        version = int(kv["format_version"])
        if version != FORMAT_VERSION:
            raise ParseError(f"{source}: unsupported format version {version}")
        returns = tuple(float(x) for x in kv.get("episode_returns", "").split(",") if x.strip())
        h = DatasetHeader(
            env=kv["env"], state_dim=int(kv["state_dim"]), n_actions=int(kv["n_actions"]),
            gamma=float(kv["gamma"]), n_trajectories=int(kv["n_trajectories"]),
            demonstrator=kv.get("demonstrator", "expert"),
            demo_return=float(kv.get("demo_return", "nan")),
            random_return=float(kv.get("random_return", "nan")),
            seed=int(kv.get("seed", 0)),
            has_next_state=kv.get("has_next_state", "true").lower() == "true",
            episode_returns=returns, version=version)
        n_transitions = int(kv["n_transitions"])
    except KeyError as exc:
        raise ParseError(f"{source}: missing header key {exc.args[0]}") from None
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{source}: bad header value ({exc})") from None
    return h, n_transitions


def load_dataset(prefix):
    prefix = Path(prefix)
    hpath, tpath = Path(f"{prefix}.header"), Path(f"{prefix}.transitions")
    header, n_transitions = _parse_header(hpath.read_text(), str(hpath))
    d, has_next = header.state_dim, header.has_next_state
    width = 2 + d + 1 + (d if has_next else 0) + 1
    episodes = {}
    last_valid = 0
    text = tpath.read_text()
    lines = text.split("\n")
    truncated = lines[-1] != ""
    if not truncated:
        lines.pop()
    for lineno, line in enumerate(lines, 1):
        if truncated and lineno == len(lines):
            raise ParseError(f"{tpath}: truncated record; last valid line {last_valid}", lineno)
        parts = line.split(",")
        if len(parts) != width:
            raise ParseError(f"{tpath}: expected {width} fields, got {len(parts)} "
                             f"(last valid line {last_valid})", lineno)
        try:
            ep, t = int(parts[0]), int(parts[1])
            state = np.array([float(x) for x in parts[2:2 + d]])
            action = int(parts[2 + d])
            nxt = np.array([float(x) for x in parts[3 + d:3 + 2 * d]]) if has_next else None
            done = parts[-1].strip()
            if done not in ("0", "1"):
                raise ValueError(f"done flag {done!r}")
        except ValueError as exc:
            raise ParseError(f"{tpath}: malformed record ({exc}); last valid line {last_valid}", lineno) from None
        if not 0 <= action < header.n_actions:
            raise ParseError(f"{tpath}: action {action} out of range", lineno)
        steps = episodes.setdefault(ep, [])
        if t != len(steps):
            raise ParseError(f"{tpath}: episode {ep} step {t} is not contiguous", lineno)
        steps.append(Transition(state, action, nxt, done == "1"))
        last_valid = lineno
    if last_valid != n_transitions:
        raise ParseError(f"{tpath}: header promises {n_transitions} transitions but the file ends "
                         f"after line {last_valid}", last_valid)
    if len(episodes) != header.n_trajectories:
        raise ParseError(f"{tpath}: header promises {header.n_trajectories} trajectories, found {len(episodes)}")
    rets = header.episode_returns or (float("nan"),) * len(episodes)
    trajs = [Trajectory(episodes[ep], rets[i], (header.seed, "demos", ep))
             for i, ep in enumerate(sorted(episodes))]
    return DemoDataset(header, trajs)
