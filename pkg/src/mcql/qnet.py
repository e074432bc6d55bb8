"""Fully connected ReLU Q-network with exact reverse-mode gradients.

Parameters are plain numpy arrays held in :class:`NetParams`; every update
returns a new object so callers can keep old parameters (target networks,
MAML initial weights) without copying defensively.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

HIDDEN = (256, 256)
CHECKPOINT_VERSION = 1


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetParams:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ValueError("weights and biases must have the same number of layers")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i} input {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "NetParams":
        arrays = list(arrays)
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def map(self, fn, *others: "NetParams") -> "NetParams":
        for o in others:
            check_same_shape(self, o)
        return NetParams.from_arrays(
            fn(*xs) for xs in zip(self.arrays(), *(o.arrays() for o in others))
        )

    def copy(self) -> "NetParams":
        return self.map(np.array)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflat(self, vector: np.ndarray) -> "NetParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vector[i : i + a.size], dtype=float).reshape(a.shape))
            i += a.size
        if i != len(vector):
            raise ValueError(f"vector has {len(vector)} entries, parameters need {i}")
        return NetParams.from_arrays(out)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def equals(self, other: "NetParams") -> bool:
        return self.sizes == other.sizes and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )


def check_same_shape(a: NetParams, b: NetParams):
    if a.sizes != b.sizes:
        raise ValueError(f"parameter shapes differ: {a.sizes} vs {b.sizes}")


def zeros_like(params: NetParams) -> NetParams:
    return params.map(np.zeros_like)


def init(in_dim: int, out_dim: int, seed: int = 0, hidden=HIDDEN) -> NetParams:
    """He-uniform weights, zero biases."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError(f"dimensions must be >= 1, got in={in_dim}, out={out_dim}")
    rng = np.random.default_rng(seed)
    sizes = (in_dim, *hidden, out_dim)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(tuple(weights), tuple(biases))


def _as_batch(params: NetParams, obs) -> tuple[np.ndarray, bool]:
    x = np.asarray(obs, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"observation shape {np.shape(obs)} does not match input dim {params.in_dim}")
    return x, single


def forward(params: NetParams, obs) -> np.ndarray:
    """Q-values for one observation (1-D) or a batch (2-D)."""
    h, single = _as_batch(params, obs)
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def forward_with_tape(params: NetParams, obs) -> tuple[np.ndarray, list]:
    """Batch forward pass that also returns each layer's input for :func:`backward`."""
    h, _ = _as_batch(params, obs)
    tape = []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        tape.append(h)
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h, tape


def backward(params: NetParams, tape: list, grad_out: np.ndarray) -> NetParams:
    """Vector-Jacobian product of the outputs w.r.t. all parameters."""
    g = grad_out
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        x = tape[i]
        gw[i] = x.T @ g
        gb[i] = g.sum(axis=0)
        if i:
            # inputs of layer i are post-ReLU activations; zero entries had non-positive pre-activations
            g = (g @ params.weights[i].T) * (x > 0)
    return NetParams(tuple(gw), tuple(gb))


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def value_and_grad(params: NetParams, obs, loss_fn: LossFn) -> tuple[float, NetParams]:
    """Evaluate ``loss_fn(Q)`` on the batch outputs and back-propagate its gradient.

    ``loss_fn`` receives the ``(N, out_dim)`` Q matrix and returns the scalar
    loss together with ``dloss/dQ``; minibatch averaging is the loss's job.
    """
    q, tape = forward_with_tape(params, obs)
    loss, dq = loss_fn(q)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"loss is not finite: {loss}")
    return float(loss), backward(params, tape, np.asarray(dq, dtype=float))


def grad(params: NetParams, obs, loss_fn: LossFn) -> NetParams:
    return value_and_grad(params, obs, loss_fn)[1]


def global_norm(g: NetParams) -> float:
    return float(np.sqrt(sum(float(np.sum(a * a)) for a in g.arrays())))


def clip_by_global_norm(g: NetParams, max_norm: float | None) -> NetParams:
    if max_norm is None:
        return g
    norm = global_norm(g)
    if norm <= max_norm:
        return g
    scale = max_norm / norm
    return g.map(lambda a: a * scale)


def sgd_step(params: NetParams, grads: NetParams, lr: float) -> NetParams:
    return params.map(lambda p, g: p - lr * g, grads)


@dataclass(frozen=True)
class AdamState:
    m: NetParams
    v: NetParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, params: NetParams, **kw) -> "AdamState":
        return cls(m=zeros_like(params), v=zeros_like(params), **kw)


def adam_step(params: NetParams, grads: NetParams, state: AdamState, lr: float) -> tuple[NetParams, AdamState]:
    check_same_shape(params, grads)
    check_same_shape(params, state.m)
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    c1, c2 = 1 - b1**t, 1 - b2**t
    root_c2 = np.sqrt(c2)
    new_p, new_m, new_v = [], [], []
    for p, g, m_, v_ in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        m = m_ * b1
        m += (1 - b1) * g
        v = g * g
        v *= 1 - b2
        v += b2 * v_
        denom = np.sqrt(v)
        denom /= root_c2
        denom += state.eps
        step = m / denom
        step *= lr / c1
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    wrap = NetParams.from_arrays
    return wrap(new_p), AdamState(wrap(new_m), wrap(new_v), t, b1, b2, state.eps)


def save(params: NetParams, path) -> None:
    """Write a versioned ``.npz`` checkpoint (layer shapes + raw float64 values)."""
    arrays = {f"a{i}": a for i, a in enumerate(params.arrays())}
    buf = io.BytesIO()
    np.savez(buf, version=np.array(CHECKPOINT_VERSION), sizes=np.array(params.sizes), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load(path) -> NetParams:
    if not os.path.exists(path):
        raise FileNotFoundError(f"no checkpoint at {path}")
    with np.load(path) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        n = len([k for k in data.files if k.startswith("a")])
        params = NetParams.from_arrays(data[f"a{i}"].astype(float) for i in range(n))
        if tuple(int(s) for s in data["sizes"]) != params.sizes:
            raise ValueError(f"{path}: stored layer sizes do not match arrays")
    return params
