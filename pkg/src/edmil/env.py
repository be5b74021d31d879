"""Environments and the rollout engine.

Tabular MDPs carry exact dynamics for the solver oracles; features are one-hot
state indicators. Cartpole uses raw physical quantities as features.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng as rngmod
from .config import parse_kv
from .errors import ContractError, DimensionError

NORTH, EAST, SOUTH, WEST = range(4)
_MOVES = {NORTH: (-1, 0), EAST: (0, 1), SOUTH: (1, 0), WEST: (0, -1)}
_PERPENDICULAR = {NORTH: (EAST, WEST), SOUTH: (EAST, WEST), EAST: (NORTH, SOUTH), WEST: (NORTH, SOUTH)}

GRIDWORLD_HORIZON = 200
CARTPOLE_HORIZON = 500


@dataclass
class TabularMdp:
    transition: np.ndarray  # T[s, a, s']
    reward: np.ndarray  # R[s, a]
    gamma: float
    initial_dist: np.ndarray
    terminal: frozenset = frozenset()
    name: str = "tabular"
    horizon: int = GRIDWORLD_HORIZON

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        self.terminal = frozenset(int(s) for s in self.terminal)
        S, A, S2 = self.transition.shape
        if S2 != S or self.reward.shape != (S, A) or self.initial_dist.shape != (S,):
            raise DimensionError("transition, reward and initial distribution disagree on sizes")
        if np.any(self.transition < 0) or np.max(np.abs(self.transition.sum(axis=2) - 1.0)) > 1e-12:
            raise ContractError("transition rows must be probability vectors")
        if abs(self.initial_dist.sum() - 1.0) > 1e-12 or np.any(self.initial_dist < 0):
            raise ContractError("initial distribution must sum to one")
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError(f"discount must lie in [0, 1), got {self.gamma}")
        for s in self.terminal:
            if not np.all(self.transition[s, :, s] == 1.0) or np.any(self.reward[s] != 0.0):
                raise ContractError(f"terminal state {s} must self-loop with zero reward")

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]

    @property
    def state_dim(self):
        return self.n_states

    def features(self, s):
        x = np.zeros(self.n_states)
        x[s] = 1.0
        return x

    def feature_matrix(self, states=None):
        states = self.nonterminal_states() if states is None else states
        return np.eye(self.n_states)[list(states)]

    def nonterminal_states(self):
        return [s for s in range(self.n_states) if s not in self.terminal]

    # episodic interface shared with ContinuousEnv

    def reset(self, rng):
        return int(rng.choice(self.n_states, p=self.initial_dist))

    def step(self, s, a, rng):
        return env_step(self, s, a, rng)

    def observe(self, s):
        return self.features(s)


def env_step(mdp, s, a, rng):
    """Sample ``(s', reward, done)`` from ``T[s, a]``."""
    if s in mdp.terminal:
        raise ContractError(f"step from terminal state {s}")
    if not 0 <= a < mdp.n_actions:
        raise ContractError(f"action {a} out of range")
    row = mdp.transition[s, a]
    s2 = int(np.searchsorted(np.cumsum(row), rng.random(), side="right"))
    s2 = min(s2, mdp.n_states - 1)
    return s2, float(mdp.reward[s, a]), s2 in mdp.terminal


def build_gridworld(width, height, slip_prob=0.1, goal_reward=10.0, step_cost=-3.0, gamma=0.95,
                    start=0, goal=None, horizon=GRIDWORLD_HORIZON, name="gridworld"):
    """Rectangular grid, four compass actions, walls block movement.

    Cells are numbered row-major. The intended move happens w.p. ``1 - slip_prob``
    and each perpendicular move w.p. ``slip_prob / 2``. ``reward[s, a]`` is
    ``step_cost`` plus ``goal_reward`` times the chance of entering the goal.
    ``start`` is a cell index or ``"uniform"`` over non-goal cells.
    """
    if width < 1 or height < 1 or width * height < 2:
        raise ContractError(f"degenerate {width}x{height} grid")
    if not 0.0 <= slip_prob < 1.0:
        raise ContractError(f"slip probability {slip_prob} outside [0, 1)")
    S = width * height
    goal = S - 1 if goal is None else goal
    T = np.zeros((S, 4, S))
    for s in range(S):
        if s == goal:
            T[s, :, s] = 1.0
            continue
        r, c = divmod(s, width)
        for a in range(4):
            outcomes = [(a, 1.0 - slip_prob)] + [(p, slip_prob / 2) for p in _PERPENDICULAR[a]]
            for move, prob in outcomes:
                dr, dc = _MOVES[move]
                nr, nc = r + dr, c + dc
                if not (0 <= nr < height and 0 <= nc < width):
                    nr, nc = r, c
                T[s, a, nr * width + nc] += prob
    R = step_cost + goal_reward * T[:, :, goal]
    R[goal] = 0.0
    if start == "uniform":
        mu = np.ones(S)
        mu[goal] = 0.0
        mu /= mu.sum()
    else:
        mu = np.zeros(S)
        mu[int(start)] = 1.0
    return TabularMdp(T, R, gamma, mu, frozenset({goal}), name=name, horizon=horizon)


def build_chain(n_states, gamma=0.9, reward=0.0, terminal_end=False):
    """Deterministic chain: action 0 moves right, action 1 stays put.

    The last state always absorbs; ``terminal_end`` also marks it terminal.
    """
    if n_states < 1:
        raise ContractError("chain needs at least one state")
    T = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        T[s, 0, min(s + 1, n_states - 1)] = 1.0
        T[s, 1, s] = 1.0
    R = np.full((n_states, 2), float(reward))
    terminal = frozenset()
    if terminal_end and n_states > 1:
        terminal = frozenset({n_states - 1})
        R[n_states - 1] = 0.0
    mu = np.zeros(n_states)
    mu[0] = 1.0
    return TabularMdp(T, R, gamma, mu, terminal, name="chain")


# cartpole


@dataclass(frozen=True)
class CartpolePhysics:
    gravity: float = 9.8
    mass_cart: float = 1.0
    mass_pole: float = 0.1
    half_length: float = 0.5
    force_mag: float = 10.0
    dt: float = 0.02
    angle_limit: float = 12 * 2 * np.pi / 360
    position_limit: float = 2.4


@dataclass
class ContinuousEnv:
    """Cart-pole balancing, explicit Euler at ``physics.dt``."""

    physics: CartpolePhysics = field(default_factory=CartpolePhysics)
    horizon: int = CARTPOLE_HORIZON
    name: str = "cartpole"
    state_dim: int = 4
    n_actions: int = 2
    gamma: float = 0.99

    def reset(self, rng):
        return rng.uniform(-0.05, 0.05, size=4)

    def observe(self, state):
        return np.asarray(state, dtype=np.float64)

    def out_of_bounds(self, state):
        p = self.physics
        return abs(state[0]) >= p.position_limit or abs(state[2]) >= p.angle_limit

    def step(self, state, action, rng=None):
        """Advance one Euler step. ``done`` fires once a bound is reached; states
        strictly past a bound belong to a finished episode and are rejected."""
        state = np.asarray(state, dtype=np.float64)
        p = self.physics
        if abs(state[0]) > p.position_limit or abs(state[2]) > p.angle_limit:
            raise ContractError("step called on a finished episode")
        if action not in (0, 1):
            raise ContractError(f"action {action} out of range")
        nxt = cartpole_euler(state, action, self.physics)
        return nxt, 1.0, bool(self.out_of_bounds(nxt))


def cartpole_euler(state, action, p):
    x, x_dot, theta, theta_dot = state
    force = p.force_mag if action == 1 else -p.force_mag
    total_mass = p.mass_cart + p.mass_pole
    polemass_length = p.mass_pole * p.half_length
    cos, sin = np.cos(theta), np.sin(theta)
    temp = (force + polemass_length * theta_dot ** 2 * sin) / total_mass
    theta_acc = (p.gravity * sin - cos * temp) / (
        p.half_length * (4.0 / 3.0 - p.mass_pole * cos ** 2 / total_mass))
    x_acc = temp - polemass_length * theta_acc * cos / total_mass
    return np.array([
        x + p.dt * x_dot,
        x_dot + p.dt * x_acc,
        theta + p.dt * theta_dot,
        theta_dot + p.dt * theta_acc,
    ])


def build_cartpole(**overrides):
    physics_keys = set(CartpolePhysics.__dataclass_fields__)
    phys = CartpolePhysics(**{k: v for k, v in overrides.items() if k in physics_keys})
    rest = {k: v for k, v in overrides.items() if k not in physics_keys}
    return ContinuousEnv(physics=phys, **rest)


def cartpole_expert(obs, rng=None):
    """Hand-tuned linear controller; balances for the full horizon from typical resets."""
    x, x_dot, theta, theta_dot = obs
    return int(theta + 0.5 * theta_dot + 0.01 * x + 0.1 * x_dot > 0)


# rollouts


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    next_state: Optional[np.ndarray]
    done: bool


@dataclass
class Trajectory:
    transitions: list
    ret: float
    seed: tuple = ()

    def __len__(self):
        return len(self.transitions)


def rollout(env, policy, n_episodes, horizon=None, seed=0, label="rollout"):
    """Run ``n_episodes`` independently seeded episodes.

    ``policy(obs, rng) -> action``. Returns undiscounted returns per trajectory.
    """
    horizon = env.horizon if horizon is None else horizon
    out = []
    for i in range(n_episodes):
        g = rngmod.stream(seed, label, i)
        state = env.reset(g)
        obs = env.observe(state)
        steps, ret = [], 0.0
        for _ in range(horizon):
            a = int(policy(obs, g))
            if not 0 <= a < env.n_actions:
                raise ContractError(f"policy produced action {a} for {env.n_actions} actions")
            state, r, done = env.step(state, a, g)
            nobs = env.observe(state)
            steps.append(Transition(obs, a, nobs, done))
            ret += r
            obs = nobs
            if done:
                break
        out.append(Trajectory(steps, ret, (seed, label, i)))
    return out


# text interfaces


ENV_SPEC_DEFAULTS = {
    "name": "gridworld", "width": "5", "height": "5", "slip": "0.1",
    "goal_reward": "10.0", "step_cost": "-3.0", "gamma": "0.95",
    "horizon": "0", "start": "0", "seed": "0",
}


def env_from_spec(spec):
    """Build an environment from a dict of string values (see ``ENV_SPEC_DEFAULTS``)."""
    unknown = set(spec) - set(ENV_SPEC_DEFAULTS)
    if unknown:
        raise ContractError(f"unknown environment keys: {sorted(unknown)}")
    s = {**ENV_SPEC_DEFAULTS, **spec}
    if s["name"] == "cartpole":
        return build_cartpole(horizon=int(s["horizon"]) or CARTPOLE_HORIZON)
    if s["name"] != "gridworld":
        raise ContractError(f"unknown environment {s['name']!r}")
    start = s["start"] if s["start"] == "uniform" else int(s["start"])
    return build_gridworld(int(s["width"]), int(s["height"]), float(s["slip"]),
                           float(s["goal_reward"]), float(s["step_cost"]), float(s["gamma"]),
                           start=start, horizon=int(s["horizon"]) or GRIDWORLD_HORIZON)


def load_env_spec(path):
    with open(path) as fh:
        return parse_kv(fh.read(), str(path))


def export_mdp(mdp, path):
    """Text dump of T and R: one ``T s a s' p`` line per nonzero entry, then ``R s a r``."""
    lines = [f"# {mdp.name} n_states={mdp.n_states} n_actions={mdp.n_actions} gamma={mdp.gamma!r}",
             f"terminal {' '.join(str(s) for s in sorted(mdp.terminal))}",
             "initial " + " ".join("%.17g" % p for p in mdp.initial_dist)]
    for s, a, s2 in zip(*np.nonzero(mdp.transition)):
        lines.append(f"T {s} {a} {s2} {mdp.transition[s, a, s2]:.17g}")
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(f"R {s} {a} {mdp.reward[s, a]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def with_gamma(mdp, gamma):
    return replace(mdp, gamma=gamma)
