"""Energy-based distribution matching and its baselines.

One training loop serves three algorithms:

* ``bc``   -- cross-entropy on demonstrated actions only.
* ``edm``  -- cross-entropy plus the occupancy loss
  ``mean_pos E(s) - mean_neg E(s)``, where negatives come from persistent
  SGLD chains or, on finite one-hot state sets, from the exact model
  distribution ``rho(s) ~ exp(-E(s))``.
* ``rcal`` -- cross-entropy plus ``lambda * mean |f(s)[a] - gamma lse f(s')|``.
"""

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .errors import ContractError, DimensionError, NonFiniteError, TriplesRequiredError
from .policy import PolicyNet, energy_input_grad, energy_on_tape, implied_rewards_on_tape, save_policy
from .solver import kl_occupancy

ALGOS = ("edm", "bc", "rcal")
NEGATIVE_PHASES = ("sgld", "exact")
LOG_COLUMNS = ("iteration", "loss_pi", "loss_rho", "kl_exact", "buffer_restarts", "wall_ms")


@dataclass
class SgldConfig:
    step_size: float = 0.01
    noise: float = 0.01
    n_steps: int = 20
    clamp: bool = False

    def __post_init__(self):
        if self.step_size <= 0 or self.noise < 0 or self.n_steps < 0:
            raise ContractError(f"invalid SGLD settings {self}")


@dataclass
class TrainConfig:
    batch_size: int = 64
    iterations: int = 10_000
    lr: float = 1e-3
    seed: int = 0
    algo: str = "edm"
    rcal_lambda: float = 1e-2
    negative_phase: str = "sgld"
    rho_weight: float = 1.0
    hidden: tuple = (64, 64)
    activation: str = "elu"
    log_every: int = 500
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    log_timing: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ContractError("batch size and iteration count must be positive")
        if self.algo not in ALGOS:
            raise ContractError(f"unknown algorithm {self.algo!r}")
        if self.negative_phase not in NEGATIVE_PHASES:
            raise ContractError(f"unknown negative phase {self.negative_phase!r}")


class PcdBuffer:
    """FIFO reservoir of SGLD chain endpoints.

    New chains start from a uniformly chosen stored state w.p. ``1 - reinit_prob``
    and from ``U(low, high)`` otherwise (or whenever the buffer is empty).
    """

    def __init__(self, capacity=10_000, reinit_prob=0.05, low=None, high=None):
        if capacity < 1 or not 0.0 <= reinit_prob <= 1.0:
            raise ContractError("buffer capacity must be positive and reinit_prob in [0, 1]")
        self.capacity = int(capacity)
        self.reinit_prob = float(reinit_prob)
        self.low = None if low is None else np.asarray(low, dtype=np.float64)
        self.high = None if high is None else np.asarray(high, dtype=np.float64)
        self._data = None
        self._head = 0
        self._size = 0

    def __len__(self):
        return self._size

    def set_range_from(self, states, expand=0.1):
        """Per-dimension [min, max] of ``states``, widened by ``expand`` of the span on each side."""
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        lo, hi = states.min(axis=0), states.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        self.low, self.high = lo - expand * span, hi + expand * span

    def uniform(self, n, rng):
        if self.low is None:
            raise ContractError("buffer init range is not set")
        return rng.uniform(self.low, self.high, size=(n, self.low.shape[0]))

    def contents(self):
        """Stored states, oldest first."""
        if self._size == 0:
            return np.zeros((0, 0 if self.low is None else self.low.shape[0]))
        if self._size < self.capacity:
            return self._data[:self._size].copy()
        return np.concatenate([self._data[self._head:], self._data[:self._head]])

    def draw_initial(self, n, rng):
        """Chain starting points and a mask of which ones were drawn uniformly."""
        fresh = self.uniform(n, rng)
        coin = rng.random(n)
        if self._size == 0:
            return fresh, np.ones(n, dtype=bool)
        idx = rng.integers(0, self._size, size=n)
        from_buffer = coin >= self.reinit_prob
        init = np.where(from_buffer[:, None], self._data[idx], fresh)
        return init, ~from_buffer

    def push(self, states):
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        if self._data is None:
            self._data = np.zeros((self.capacity, states.shape[1]))
        elif states.shape[1] != self._data.shape[1]:
            raise DimensionError(f"buffer holds {self._data.shape[1]}-dim states, got {states.shape[1]}")
        for row in states:
            self._data[self._head] = row
            self._head = (self._head + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)


def langevin_step(states, grad, step_size, noise_scale, noise):
    """``s - step_size * dE/ds + noise_scale * noise``."""
    return states - step_size * grad + noise_scale * noise


def run_langevin(grad_fn, init, step_size, noise_scale, n_steps, rng, restart=None, clamp=None):
    """Run parallel Langevin chains from ``init`` (one per row).

    ``restart(k)`` supplies ``k`` fresh states for chains that go non-finite;
    ``clamp`` is an optional ``(low, high)`` box. Returns ``(states, n_restarts)``.
    """
    s = np.array(init, dtype=np.float64)
    restarts = 0
    for _ in range(n_steps):
        s = langevin_step(s, grad_fn(s), step_size, noise_scale, rng.standard_normal(s.shape))
        bad = ~np.all(np.isfinite(s), axis=1)
        if bad.any():
            if restart is None:
                raise NonFiniteError("Langevin chain diverged")
            s[bad] = restart(int(bad.sum()))
            restarts += int(bad.sum())
        if clamp is not None:
            s = np.clip(s, clamp[0], clamp[1])
    return s, restarts


@dataclass
class SgldStats:
    uniform_starts: int = 0
    nonfinite_restarts: int = 0


def sgld_sample(energy, buffer, cfg, n, rng, stats=None):
    """Draw ``n`` negative states by persistent SGLD; endpoints are appended to ``buffer``.

    ``energy`` is a :class:`PolicyNet` (energy ``-logsumexp f(s)``) or any
    callable mapping a batch of states to ``dE/ds``.
    """
    grad_fn = (lambda s: energy_input_grad(energy, s)) if isinstance(energy, PolicyNet) else energy
    init, uniform_mask = buffer.draw_initial(n, rng)
    clamp = (buffer.low, buffer.high) if cfg.clamp else None
    states, restarts = run_langevin(grad_fn, init, cfg.step_size, cfg.noise, cfg.n_steps, rng,
                                    restart=lambda k: buffer.uniform(k, rng), clamp=clamp)
    buffer.push(states)
    if stats is not None:
        stats.uniform_starts += int(uniform_mask.sum())
        stats.nonfinite_restarts += restarts
    return states


def exact_negative_phase(net, feature_set):
    """Exact model distribution over a finite state set and the expected energy under it.

    Returns ``(rho, expected_energy, energies)`` with ``rho(s) ~ exp(-E(s))``.
    """
    energies = -ad.logsumexp(net.logits(feature_set), axis=-1)
    rho = ad.softmax(-energies)
    return rho, float(rho @ energies), energies


def surrogate_losses(net, states, actions, negative_states, tape,
                     negative_weights=None, positive_states=None):
    """``(loss_pi, loss_rho)`` as scalar tensors on one tape.

    ``loss_pi`` is the mean cross-entropy of the demonstrated actions.
    ``loss_rho`` is ``mean E(positive) - mean E(negative)``; positives default
    to the demonstration states. Negative states are constants: gradient flows
    only through the energy evaluated at them. With ``negative_weights`` the
    negative mean becomes a fixed weighted sum (exact negative phase).
    """
    states = np.atleast_2d(states)
    if len(states) == 0 or len(negative_states) == 0:
        raise ContractError("surrogate losses need non-empty batches")
    logits, _ = net.forward(states, tape)
    lse = tape.logsumexp(logits)
    loss_pi = tape.mean(tape.sub(lse, tape.take(logits, actions)))
    if positive_states is None:
        pos = tape.mean(tape.neg(lse))
    else:
        pos_energy, _, _ = energy_on_tape(net, positive_states, tape)
        pos = tape.mean(pos_energy)
    neg_energy, _, _ = energy_on_tape(net, negative_states, tape)
    if negative_weights is None:
        neg = tape.mean(neg_energy)
    else:
        neg = tape.weighted_sum(neg_energy, negative_weights)
    return loss_pi, tape.sub(pos, neg)


def empirical_state_distribution(states, feature_set):
    """Histogram of ``states`` over the rows of a one-hot ``feature_set``."""
    feature_set = np.asarray(feature_set)
    lookup = {tuple(np.flatnonzero(row)): i for i, row in enumerate(feature_set)}
    counts = np.zeros(len(feature_set))
    for s in np.atleast_2d(states):
        key = tuple(np.flatnonzero(s))
        if key not in lookup:
            raise ContractError("demonstration state missing from the feature set")
        counts[lookup[key]] += 1
    return counts / counts.sum()


def model_kl(net, rho_data, feature_set):
    rho_theta, _, _ = exact_negative_phase(net, feature_set)
    return kl_occupancy(rho_data, rho_theta)


@dataclass
class TrainResult:
    net: PolicyNet
    log: list
    buffer: Optional[PcdBuffer] = None
    stats: SgldStats = field(default_factory=SgldStats)


def augment_state_only(dataset, state_only_states):
    """Positive-phase state pool: demonstration states followed by extra state-only rows."""
    states = dataset.arrays()[0]
    extra = np.zeros((0, states.shape[1])) if state_only_states is None else np.atleast_2d(state_only_states)
    if extra.size and extra.shape[1] != states.shape[1]:
        raise DimensionError(f"state-only rows have {extra.shape[1]} features, dataset has {states.shape[1]}")
    if not extra.size:
        return states
    return np.vstack([states, extra])


def train(dataset, cfg, sgld=None, buffer=None, feature_set=None, state_only=None, net=None):
    """Shared loop behind :func:`train_edm`, :func:`train_bc` and :func:`train_rcal`."""
    states, actions, next_states, done = dataset.arrays()
    if len(states) == 0:
        raise ContractError("empty demonstration dataset")
    if cfg.algo == "rcal" and next_states is None:
        raise TriplesRequiredError("RCAL needs (state, action, next_state) triples; dataset holds pairs only")
    h = dataset.header
    if net is None:
        net = PolicyNet.create(h.state_dim, h.n_actions, rngmod.stream(cfg.seed, "init"),
                               hidden=cfg.hidden, activation=cfg.activation)
    if net.state_dim != states.shape[1]:
        raise DimensionError(f"network expects {net.state_dim} features, data has {states.shape[1]}")
    batch_rng = rngmod.stream(cfg.seed, "batch")
    neg_rng = rngmod.stream(cfg.seed, "sgld")
    pos_rng = rngmod.stream(cfg.seed, "positive")

    edm = cfg.algo == "edm"
    pool = augment_state_only(dataset, state_only)
    use_pool = len(pool) > len(states)
    exact = edm and cfg.negative_phase == "exact"
    rho_data = None
    if exact:
        if feature_set is None:
            raise ContractError("exact negative phase needs the finite feature set")
        feature_set = np.asarray(feature_set, dtype=np.float64)
        rho_data = empirical_state_distribution(pool, feature_set)
    elif edm:
        sgld = SgldConfig() if sgld is None else sgld
        buffer = PcdBuffer() if buffer is None else buffer
        if buffer.low is None:
            buffer.set_range_from(pool)
    stats = SgldStats()

    log = []
    t0 = time.perf_counter()

    def record(it, lp, lr_):
        kl = model_kl(net, rho_data, feature_set) if exact else None
        wall = (time.perf_counter() - t0) * 1e3 if cfg.log_timing else None
        log.append({"iteration": it, "loss_pi": lp, "loss_rho": lr_, "kl_exact": kl,
                    "buffer_restarts": stats.uniform_starts + stats.nonfinite_restarts,
                    "wall_ms": wall})

    record(0, None, None)
    n, N = len(states), cfg.batch_size
    for it in range(1, cfg.iterations + 1):
        idx = batch_rng.integers(0, n, size=N)
        tape = ad.Tape()
        loss_rho = None
        if edm:
            pos = pool[pos_rng.integers(0, len(pool), size=N)] if use_pool else None
            if exact:
                rho_theta, _, _ = exact_negative_phase(net, feature_set)
                loss_pi, loss_rho = surrogate_losses(net, states[idx], actions[idx], feature_set, tape,
                                                     negative_weights=rho_theta, positive_states=pos)
            else:
                neg = sgld_sample(net, buffer, sgld, N, neg_rng, stats)
                loss_pi, loss_rho = surrogate_losses(net, states[idx], actions[idx], neg, tape,
                                                     positive_states=pos)
            total = tape.add(loss_pi, tape.scale(loss_rho, cfg.rho_weight))
        else:
            logits, _ = net.forward(states[idx], tape)
            loss_pi = tape.mean(tape.sub(tape.logsumexp(logits), tape.take(logits, actions[idx])))
            total = loss_pi
        if cfg.algo == "rcal":
            rhat = implied_rewards_on_tape(net, states[idx], actions[idx], next_states[idx], done[idx],
                                           h.gamma, tape)
            total = tape.add(total, tape.scale(tape.mean(tape.abs(rhat)), cfg.rcal_lambda))
        if not np.isfinite(total.item()):
            raise NonFiniteError(f"iteration {it}: non-finite loss (loss_pi={loss_pi.item()}, "
                                 f"loss_rho={None if loss_rho is None else loss_rho.item()})")
        grads = ad.backward(tape, total)
        ad.adam_step(net.params, grads, cfg.lr)
        if it % cfg.log_every == 0 or it == cfg.iterations:
            record(it, loss_pi.item(), None if loss_rho is None else loss_rho.item())
        if cfg.checkpoint_every and cfg.checkpoint_dir and it % cfg.checkpoint_every == 0:
            Path(cfg.checkpoint_dir).mkdir(parents=True, exist_ok=True)
            save_policy(Path(cfg.checkpoint_dir) / f"iter{it:06d}.ckpt", net, {"iteration": it})
    return TrainResult(net, log, buffer, stats)


def _with_algo(cfg, algo):
    from dataclasses import replace

    return cfg if cfg.algo == algo else replace(cfg, algo=algo)


def train_edm(dataset, cfg, sgld=None, buffer=None, feature_set=None, state_only=None):
    return train(dataset, _with_algo(cfg, "edm"), sgld, buffer, feature_set, state_only)


def train_bc(dataset, cfg):
    return train(dataset, _with_algo(cfg, "bc"))


def train_rcal(dataset, cfg):
    return train(dataset, _with_algo(cfg, "rcal"))


def mean_abs_implied_reward(net, dataset):
    states, actions, nxt, done = dataset.arrays()
    if nxt is None:
        raise TriplesRequiredError("implied rewards need next_state triples")
    f = net.logits(states)[np.arange(len(actions)), actions]
    cont = np.where(done, 0.0, ad.logsumexp(net.logits(nxt), axis=-1))
    return float(np.mean(np.abs(f - dataset.header.gamma * cont)))


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def write_log_csv(path, log):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in log:
            w.writerow([_cell(row[c]) for c in LOG_COLUMNS])
