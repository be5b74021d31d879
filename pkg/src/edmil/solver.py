"""Exact soft-RL and occupancy computations on finite MDPs.

Conventions:
  * ``V(s) = temperature * logsumexp(Q(s, .) / temperature)``.
  * Terminal states end the episode, so their continuation value is zero in
    both the soft Bellman operator and its inverse.
  * Occupancy is normalized by ``(1 - gamma)`` and solved over non-terminal
    states only; terminal states carry zero mass. Its total is therefore one
    minus the discounted probability of having terminated.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import logsumexp, softmax
from .errors import ContractError, ConvergenceError


@dataclass
class SoftQ:
    q: np.ndarray
    gamma: float
    residual: float
    temperature: float = 1.0
    iterations: int = 0

    @property
    def values(self):
        return soft_values(self.q, self.temperature)


@dataclass
class OccupancyMeasure:
    state: np.ndarray
    state_action: np.ndarray
    normalized: bool = False

    def normalize(self):
        z = self.state.sum()
        if z <= 0:
            raise ContractError("cannot normalize an all-zero occupancy")
        return OccupancyMeasure(self.state / z, self.state_action / z, True)


def soft_values(q, temperature=1.0):
    return temperature * logsumexp(np.asarray(q) / temperature, axis=1)


def _continuation(mdp, q, temperature):
    v = soft_values(q, temperature)
    if mdp.terminal:
        v = v.copy()
        v[list(mdp.terminal)] = 0.0
    return mdp.transition @ v


def bellman_operator(mdp, reward, q, temperature=1.0):
    """``(B Q)(s, a) = R(s, a) + gamma * E[V(s') | s, a]``."""
    return np.asarray(reward) + mdp.gamma * _continuation(mdp, q, temperature)


def soft_value_iteration(mdp, reward=None, tol=1e-9, temperature=1.0, max_iter=200_000, q0=None):
    if tol <= 0:
        raise ContractError("tolerance must be positive")
    if not mdp.gamma < 1.0:
        raise ContractError("soft value iteration needs gamma < 1")
    R = mdp.reward if reward is None else np.asarray(reward, dtype=np.float64)
    q = np.zeros_like(R) if q0 is None else np.array(q0, dtype=np.float64)
    residual = np.inf
    for it in range(1, max_iter + 1):
        nq = bellman_operator(mdp, R, q, temperature)
        residual = float(np.max(np.abs(nq - q)))
        q = nq
        if residual <= tol:
            return SoftQ(q, mdp.gamma, residual, temperature, it)
    raise ConvergenceError(f"soft value iteration stalled at residual {residual:.3e}", residual)


def soft_policy_from_q(q, temperature=None):
    """Boltzmann policy ``pi(a|s) = exp((Q(s,a) - V(s)) / temperature)``."""
    if isinstance(q, SoftQ):
        temperature = q.temperature if temperature is None else temperature
        q = q.q
    temperature = 1.0 if temperature is None else temperature
    return softmax(np.asarray(q, dtype=np.float64) / temperature, axis=1)


def inverse_bellman(q, mdp, temperature=None):
    """``(J Q)(s, a) = Q(s, a) - gamma * E[V(s') | s, a]``: the reward whose soft fixed point is ``Q``."""
    if isinstance(q, SoftQ):
        temperature = q.temperature if temperature is None else temperature
        q = q.q
    temperature = 1.0 if temperature is None else temperature
    q = np.asarray(q, dtype=np.float64)
    return q - mdp.gamma * _continuation(mdp, q, temperature)


def _check_policy(mdp, policy):
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError(f"policy table shape {policy.shape}, expected {(mdp.n_states, mdp.n_actions)}")
    if np.any(policy < 0) or np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-9:
        raise ContractError("policy rows must be probability vectors")
    return policy


def state_transition_matrix(mdp, policy):
    return np.einsum("sa,sat->st", policy, mdp.transition)


def exact_occupancy(mdp, policy):
    """Solve ``rho = (1 - gamma) mu + gamma P_pi^T rho`` over non-terminal states."""
    policy = _check_policy(mdp, policy)
    live = mdp.nonterminal_states()
    P = state_transition_matrix(mdp, policy)[np.ix_(live, live)]
    A = np.eye(len(live)) - mdp.gamma * P.T
    b = (1.0 - mdp.gamma) * mdp.initial_dist[live]
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ContractError(f"singular flow system: {exc}") from exc
    rho = np.zeros(mdp.n_states)
    rho[live] = sol
    return OccupancyMeasure(rho, rho[:, None] * policy)


def flow_residual(mdp, policy, rho):
    """Sup-norm violation of the Bellman flow equation on non-terminal states."""
    state = rho.state if isinstance(rho, OccupancyMeasure) else np.asarray(rho)
    live = mdp.nonterminal_states()
    P = state_transition_matrix(mdp, np.asarray(policy))[np.ix_(live, live)]
    r = state[live] - (1.0 - mdp.gamma) * mdp.initial_dist[live] - mdp.gamma * P.T @ state[live]
    return float(np.max(np.abs(r)))


def kl_occupancy(rho_data, rho_model):
    """``sum p log(p / q)`` with ``0 log 0 = 0``; ``inf`` when ``q`` misses support of ``p``."""
    p = rho_data.state if isinstance(rho_data, OccupancyMeasure) else np.asarray(rho_data, dtype=np.float64)
    q = rho_model.state if isinstance(rho_model, OccupancyMeasure) else np.asarray(rho_model, dtype=np.float64)
    if p.shape != q.shape:
        raise ContractError(f"occupancy shapes {p.shape} and {q.shape} differ")
    for name, d in (("data", p), ("model", q)):
        if np.any(d < 0) or abs(d.sum() - 1.0) > 1e-9:
            raise ContractError(f"{name} occupancy is not normalized")
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def policy_value(mdp, policy, reward=None):
    """Exact discounted value ``V_pi`` (terminal states are worth zero)."""
    policy = _check_policy(mdp, policy)
    R = mdp.reward if reward is None else np.asarray(reward)
    live = mdp.nonterminal_states()
    P = state_transition_matrix(mdp, policy)[np.ix_(live, live)]
    r = np.sum(policy * R, axis=1)[live]
    v = np.zeros(mdp.n_states)
    v[live] = np.linalg.solve(np.eye(len(live)) - mdp.gamma * P, r)
    return v


def expected_return(mdp, policy, horizon=None):
    """Exact expected undiscounted return of episodes capped at ``horizon`` steps."""
    policy = _check_policy(mdp, policy)
    horizon = mdp.horizon if horizon is None else horizon
    P = state_transition_matrix(mdp, policy)
    r = np.sum(policy * mdp.reward, axis=1)
    dead = list(mdp.terminal)
    v = np.zeros(mdp.n_states)
    for _ in range(horizon):
        v = r + P @ v
        v[dead] = 0.0
    return float(mdp.initial_dist @ v)


def write_table_csv(path, table, header="value"):
    """Write an ``S x A`` table as ``state,action,value`` rows."""
    table = np.asarray(table)
    with open(path, "w") as fh:
        fh.write(f"state,action,{header}\n")
        for s in range(table.shape[0]):
            for a in range(table.shape[1]):
                fh.write(f"{s},{a},{table[s, a]:.17g}\n")


def read_table_csv(path):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    S, A = int(rows[:, 0].max()) + 1, int(rows[:, 1].max()) + 1
    out = np.zeros((S, A))
    out[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
    return out
