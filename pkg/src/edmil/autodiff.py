"""Tape-based reverse-mode differentiation over dense float64 arrays.

Only what an MLP policy and its energy need: affine layers, a handful of
pointwise nonlinearities, row-wise logsumexp, gathers and reductions.
Broadcasting is limited to bias-add and scalar scaling.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ContractError, DimensionError, NonFiniteError, ParseError

CHECKPOINT_VERSION = 1


class Activation(str, Enum):
    ELU = "elu"
    RELU = "relu"
    TANH = "tanh"


def logsumexp(x, axis=-1):
    """Stable ``log(sum(exp(x)))`` along ``axis`` for plain arrays."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise ContractError("logsumexp over an empty axis")
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(x - np.expand_dims(logsumexp(x, axis), axis))


class Tensor:
    """Immutable array plus the bookkeeping the tape needs."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


class Tape:
    """Ordered record of primitive ops; each entry keeps its vector-Jacobian product."""

    def __init__(self):
        self._nodes = []
        self._on_tape = set()
        self._leaves = {}

    def __len__(self):
        return len(self._nodes)

    # leaves

    def leaf(self, data, name, requires_grad=True):
        if name in self._leaves:
            raise ContractError(f"leaf name {name!r} already used on this tape")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad, name=name)
        self._leaves[name] = t
        self._on_tape.add(id(t))
        return t

    def shared_leaf(self, data, name):
        """Like :meth:`leaf`, but hands back the existing leaf if ``name`` is taken."""
        if name in self._leaves:
            return self._leaves[name]
        return self.leaf(data, name)

    def constant(self, data):
        t = Tensor(np.array(data, dtype=np.float64))
        self._on_tape.add(id(t))
        return t

    def _as_tensor(self, x):
        return x if isinstance(x, Tensor) else self.constant(x)

    def _record(self, data, parents, vjp):
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        self._on_tape.add(id(out))
        if out.requires_grad:
            self._nodes.append((out, parents, vjp))
        return out

    # primitives

    def matmul(self, a, b):
        a, b = self._as_tensor(a), self._as_tensor(b)
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul of {a.shape} and {b.shape}")
        A, B = a.data, b.data
        return self._record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))

    def add_bias(self, x, b):
        x, b = self._as_tensor(x), self._as_tensor(b)
        if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
            raise DimensionError(f"bias {b.shape} does not fit {x.shape}")
        return self._record(x.data + b.data, (x, b),
                            lambda g: (g, g.reshape(-1, b.shape[0]).sum(axis=0)))

    def add(self, a, b):
        a, b = self._as_tensor(a), self._as_tensor(b)
        _same_shape(a, b, "add")
        return self._record(a.data + b.data, (a, b), lambda g: (g, g))

    def sub(self, a, b):
        a, b = self._as_tensor(a), self._as_tensor(b)
        _same_shape(a, b, "sub")
        return self._record(a.data - b.data, (a, b), lambda g: (g, -g))

    def mul(self, a, b):
        a, b = self._as_tensor(a), self._as_tensor(b)
        _same_shape(a, b, "mul")
        A, B = a.data, b.data
        return self._record(A * B, (a, b), lambda g: (g * B, g * A))

    def scale(self, x, c):
        c = float(c)
        return self._record(x.data * c, (x,), lambda g: (g * c,))

    def neg(self, x):
        return self.scale(x, -1.0)

    def abs(self, x):
        # zero subgradient at exactly zero
        s = np.sign(x.data)
        return self._record(np.abs(x.data), (x,), lambda g: (g * s,))

    def elu(self, x):
        X = x.data
        em1 = np.expm1(np.minimum(X, 0.0))
        d = em1 + 1.0
        return self._record(np.maximum(X, 0.0) + em1, (x,), lambda g: (g * d,))

    def relu(self, x):
        mask = (x.data > 0).astype(np.float64)
        return self._record(x.data * mask, (x,), lambda g: (g * mask,))

    def tanh(self, x):
        t = np.tanh(x.data)
        return self._record(t, (x,), lambda g: (g * (1.0 - t * t),))

    def activation(self, x, kind):
        kind = Activation(kind)
        if kind is Activation.ELU:
            return self.elu(x)
        if kind is Activation.RELU:
            return self.relu(x)
        return self.tanh(x)

    def logsumexp(self, x, axis=-1):
        X = x.data
        if X.ndim == 0:
            raise DimensionError("logsumexp needs at least one axis")
        axis = axis % X.ndim
        out = logsumexp(X, axis)
        p = np.exp(X - np.expand_dims(out, axis))
        return self._record(out, (x,), lambda g: (np.expand_dims(g, axis) * p,))

    def take(self, x, index):
        """Pick ``x[i, index[i]]`` for each row of a 2-D tensor."""
        if x.data.ndim != 2:
            raise DimensionError(f"take expects a 2-D tensor, got {x.shape}")
        idx = np.asarray(index, dtype=np.int64)
        if idx.shape != (x.shape[0],):
            raise DimensionError(f"index shape {idx.shape} for rows {x.shape[0]}")
        rows = np.arange(x.shape[0])
        shape = x.shape

        def vjp(g):
            out = np.zeros(shape)
            out[rows, idx] = g
            return (out,)

        return self._record(x.data[rows, idx], (x,), vjp)

    def sum(self, x):
        shape = x.shape
        return self._record(np.sum(x.data), (x,), lambda g: (np.full(shape, float(g)),))

    def mean(self, x):
        shape, n = x.shape, x.size
        if n == 0:
            raise ContractError("mean of an empty tensor")
        return self._record(np.sum(x.data) / n, (x,), lambda g: (np.full(shape, float(g) / n),))

    def weighted_sum(self, x, weights):
        """``sum(w * x)`` with ``w`` held constant."""
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != x.shape:
            raise DimensionError(f"weights {w.shape} vs tensor {x.shape}")
        return self._record(np.sum(w * x.data), (x,), lambda g: (float(g) * w,))


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def backward(tape, output):
    """Gradients of a scalar ``output`` for every named differentiable leaf.

    Leaves that do not feed ``output`` get zeros of their own shape.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if id(output) not in tape._on_tape:
        raise ContractError("output was not produced on this tape")
    grads = {id(output): np.ones(output.shape)}
    for out, parents, vjp in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for p, gp in zip(parents, vjp(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = np.asarray(gp, dtype=np.float64).reshape(p.shape)
    return {
        name: grads.get(id(t), np.zeros(t.shape)).reshape(t.shape)
        for name, t in tape._leaves.items()
        if t.requires_grad
    }


@dataclass
class ParamStore:
    """Named parameters plus Adam moment estimates."""

    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.params = {k: np.array(p, dtype=np.float64) for k, p in self.params.items()}
        for k, p in self.params.items():
            self.m.setdefault(k, np.zeros_like(p))
            self.v.setdefault(k, np.zeros_like(p))

    def names(self):
        return list(self.params)

    def copy(self):
        return ParamStore({k: p.copy() for k, p in self.params.items()},
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()},
                          self.step, self.beta1, self.beta2, self.eps)

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params.values()])


def init_mlp(widths, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    if len(widths) < 2:
        raise DimensionError("an MLP needs at least input and output widths")
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"W{i}"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"b{i}"] = rng.uniform(-bound, bound, size=fan_out)
    return ParamStore(params)


def n_layers(params):
    return sum(1 for k in params.params if k.startswith("W"))


def forward_mlp(params, x, activation, tape, watch_input=False):
    """Run the MLP on ``x`` (a row vector or a batch of rows), recording on ``tape``.

    Returns ``(logits, input_tensor)``; the input is a differentiable leaf
    named ``"input"`` only when ``watch_input`` is set. Calling it twice on one
    tape reuses the parameter leaves, so gradients from both passes accumulate.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    h = tape.leaf(x, "input") if watch_input else tape.constant(x)
    inp = h
    L = n_layers(params)
    for i in range(L):
        W = params.params[f"W{i}"]
        if h.shape[-1] != W.shape[0]:
            raise DimensionError(f"layer {i}: input width {h.shape[-1]} but W{i} expects {W.shape[0]}")
        Wt = tape.shared_leaf(W, f"W{i}")
        bt = tape.shared_leaf(params.params[f"b{i}"], f"b{i}")
        h = tape.add_bias(tape.matmul(h, Wt), bt)
        if i < L - 1:
            h = tape.activation(h, activation)
    return h, inp


def mlp_numpy(params, x, activation):
    """Tape-free forward pass for inference."""
    h = np.asarray(x, dtype=np.float64)
    L = n_layers(params)
    act = Activation(activation)
    for i in range(L):
        W = params.params[f"W{i}"]
        if h.shape[-1] != W.shape[0]:
            raise DimensionError(f"layer {i}: input width {h.shape[-1]} but W{i} expects {W.shape[0]}")
        h = h @ W + params.params[f"b{i}"]
        if i < L - 1:
            if act is Activation.ELU:
                h = np.where(h < 0, np.expm1(np.minimum(h, 0.0)), h)
            elif act is Activation.RELU:
                h = np.maximum(h, 0.0)
            else:
                h = np.tanh(h)
    return h


def adam_step(params, grads, lr):
    """One bias-corrected Adam update, in place. Returns ``params``."""
    for name, g in grads.items():
        if name not in params.params:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != params.params[name].shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {params.params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
    params.step += 1
    t = params.step
    b1, b2 = params.beta1, params.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = params.m[name] = b1 * params.m[name] + (1.0 - b1) * g
        v = params.v[name] = b2 * params.v[name] + (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + params.eps)
    return params


# checkpoints


def save_params(path, params, meta=None):
    """Write a decimal-text checkpoint (17 significant digits, exact round trip)."""
    lines = [f"edmil-checkpoint {CHECKPOINT_VERSION}"]
    for k, v in (meta or {}).items():
        lines.append(f"meta {k} {v}")
    lines.append(f"step {params.step}")
    for label, table in (("param", params.params), ("adam_m", params.m), ("adam_v", params.v)):
        for name, arr in table.items():
            dims = ",".join(str(d) for d in arr.shape)
            lines.append(f"{label} {name} {dims}")
            lines.append(" ".join("%.17g" % x for x in arr.ravel()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path):
    """Inverse of :func:`save_params`. Returns ``(ParamStore, meta)``."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("edmil-checkpoint "):
        raise ParseError("not a checkpoint file", 1)
    version = int(lines[0].split()[1])
    if version != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 1)
    meta, tables, step = {}, {"param": {}, "adam_m": {}, "adam_v": {}}, 0
    i = 1
    while i < len(lines):
        parts = lines[i].split(" ", 2)
        if parts[0] == "meta":
            meta[parts[1]] = parts[2] if len(parts) > 2 else ""
        elif parts[0] == "step":
            step = int(parts[1])
        elif parts[0] in tables:
            if i + 1 >= len(lines):
                raise ParseError(f"missing values for {parts[1]}", i + 1)
            shape = tuple(int(d) for d in parts[2].split(",") if d)
            vals = np.array([float(t) for t in lines[i + 1].split()], dtype=np.float64)
            if vals.size != int(np.prod(shape)):
                raise ParseError(f"{parts[1]}: expected {int(np.prod(shape))} values, got {vals.size}", i + 2)
            tables[parts[0]][parts[1]] = vals.reshape(shape)
            i += 1
        elif lines[i].strip():
            raise ParseError(f"unrecognized record {parts[0]!r}", i + 1)
        i += 1
    store = ParamStore(tables["param"], tables["adam_m"], tables["adam_v"], step)
    return store, meta
