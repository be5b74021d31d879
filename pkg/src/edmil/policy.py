"""Softmax policy whose logits double as a state energy.

``pi(a|s) = softmax(f(s))[a]`` and ``E(s) = -logsumexp(f(s))``. The logits are
never centered: their offset is exactly what the energy term learns.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Activation, ParamStore
from .errors import DimensionError, TriplesRequiredError


@dataclass
class PolicyNet:
    params: ParamStore
    widths: tuple
    activation: Activation = Activation.ELU

    @classmethod
    def create(cls, state_dim, n_actions, rng, hidden=(64, 64), activation=Activation.ELU):
        widths = (int(state_dim), *map(int, hidden), int(n_actions))
        return cls(ad.init_mlp(widths, rng), widths, Activation(activation))

    @property
    def state_dim(self):
        return self.widths[0]

    @property
    def n_actions(self):
        return self.widths[-1]

    def _check(self, s):
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != self.state_dim:
            raise DimensionError(f"state has {s.shape[-1]} features, network expects {self.state_dim}")
        return s

    def logits(self, s):
        return ad.mlp_numpy(self.params, self._check(s), self.activation)

    def forward(self, s, tape, watch_input=False):
        """Logits recorded on ``tape`` for a batch (or single row) of states."""
        return ad.forward_mlp(self.params, self._check(s), self.activation, tape, watch_input)

    def copy(self):
        return PolicyNet(self.params.copy(), tuple(self.widths), self.activation)

    def describe(self):
        return {"widths": ",".join(map(str, self.widths)), "activation": self.activation.value}


def action_probs(net, s):
    return ad.softmax(net.logits(s), axis=-1)


def state_energy(net, s):
    return -ad.logsumexp(net.logits(s), axis=-1)


def energy_on_tape(net, s, tape, watch_input=False):
    """Per-row energies as a tape tensor, plus the logits and the input leaf."""
    logits, inp = net.forward(s, tape, watch_input)
    return tape.neg(tape.logsumexp(logits)), logits, inp


def energy_input_grad(net, states):
    """``dE/ds`` for each row of ``states``; rows are independent so one backward suffices."""
    tape = ad.Tape()
    energy, _, _ = energy_on_tape(net, np.atleast_2d(states), tape, watch_input=True)
    grads = ad.backward(tape, tape.sum(energy))
    return grads["input"]


def sample_action(probs, rng):
    """Inverse-CDF draw from one probability vector."""
    u = rng.random()
    return min(int(np.searchsorted(np.cumsum(probs), u, side="right")), len(probs) - 1)


def implied_reward(net, transition, gamma):
    """``f(s)[a] - gamma * logsumexp f(s')``, with zero continuation on terminal steps."""
    f = net.logits(transition.state)
    cont = 0.0
    if not transition.done:
        if transition.next_state is None:
            raise TriplesRequiredError("implied reward needs next_state (triple data)")
        cont = float(ad.logsumexp(net.logits(transition.next_state)))
    return float(f[transition.action]) - gamma * cont


def implied_rewards_on_tape(net, states, actions, next_states, done, gamma, tape):
    """Batched implied rewards as a tape tensor (shares parameter leaves with other passes)."""
    logits, _ = net.forward(states, tape)
    picked = tape.take(logits, actions)
    next_logits, _ = net.forward(next_states, tape)
    cont_mask = gamma * (1.0 - np.asarray(done, dtype=np.float64))
    cont = tape.mul(tape.logsumexp(next_logits), cont_mask)
    return tape.sub(picked, cont)


class TablePolicy:
    """Action rule backed by a ``states x actions`` probability table (tabular envs)."""

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def __call__(self, obs, rng):
        return sample_action(self.table[int(np.argmax(obs))], rng)


class NetPolicy:
    def __init__(self, net):
        self.net = net

    def __call__(self, obs, rng):
        return sample_action(action_probs(self.net, obs), rng)


def as_action_rule(net, env):
    """Wrap ``net`` for rollouts; tabular envs get a precomputed table."""
    if hasattr(env, "transition"):
        return TablePolicy(action_probs(net, np.eye(env.n_states)))
    return NetPolicy(net)


def uniform_policy(n_actions):
    probs = np.full(n_actions, 1.0 / n_actions)
    return lambda obs, rng: sample_action(probs, rng)


def save_policy(path, net, meta=None):
    ad.save_params(path, net.params, {**net.describe(), **(meta or {})})


def load_policy(path):
    params, meta = ad.load_params(path)
    widths = tuple(int(w) for w in meta["widths"].split(","))
    return PolicyNet(params, widths, Activation(meta["activation"])), meta
