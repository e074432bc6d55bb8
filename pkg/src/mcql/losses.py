"""DQN and CQL losses on offline minibatches, independent and value-decomposed.

Every loss returns its value together with the gradient w.r.t. the online
parameters. Target networks only enter through the bootstrap term and never
receive gradient.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import qnet
from .qnet import NetParams

ALGOS = ("i-dqn", "ctde-dqn", "i-cql", "ctde-cql")


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class AgentBatch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class Minibatch:
    """Transitions aligned across agents: ``obs[u, i]`` and ``obs[v, i]`` share time step and reward."""

    obs: np.ndarray  # (U, N, F)
    actions: np.ndarray  # (U, N)
    rewards: np.ndarray  # (N,)
    next_obs: np.ndarray  # (U, N, F)
    done: np.ndarray  # (N,)

    def __post_init__(self):
        U, N = self.actions.shape
        if self.obs.shape[:2] != (U, N) or self.next_obs.shape != self.obs.shape:
            raise ValueError("obs/next_obs shapes do not match actions")
        if self.rewards.shape != (N,) or self.done.shape != (N,):
            raise ValueError("rewards and done must have one entry per aligned sample")
        if not np.isfinite(self.rewards).all():
            raise ValueError("rewards must be finite")

    @property
    def n_agents(self) -> int:
        return self.actions.shape[0]

    def __len__(self):
        return self.actions.shape[1]

    def agent(self, u: int) -> AgentBatch:
        return AgentBatch(self.obs[u], self.actions[u], self.rewards, self.next_obs[u], self.done)


def logsumexp(q: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp with max shift."""
    m = q.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(q - m).sum(axis=-1, keepdims=True)))[..., 0]


def softmax(q: np.ndarray) -> np.ndarray:
    e = np.exp(q - q.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check(batch):
    if len(batch) == 0:
        raise EmptyBatchError("cannot evaluate a loss on an empty batch")


def _bootstrap(target: NetParams, batch: AgentBatch | Minibatch, gamma: float, agent=None) -> np.ndarray:
    mask = gamma * (1.0 - batch.done.astype(float))
    if agent is None:
        return mask * qnet.forward(target, batch.next_obs).max(axis=1)
    return mask * qnet.forward(target, batch.next_obs[agent]).max(axis=1)


def _check_gamma(gamma):
    if not 0 <= gamma < 1:
        raise ValueError(f"discount must satisfy 0 <= gamma < 1, got {gamma}")


def _independent(online, target, batch: AgentBatch, gamma, alpha, dqn_scale):
    _check(batch)
    _check_gamma(gamma)
    n = len(batch)
    rows = np.arange(n)
    y = batch.rewards + _bootstrap(target, batch, gamma)

    def loss_fn(q):
        q_sa = q[rows, batch.actions]
        err = y - q_sa
        loss = dqn_scale * np.mean(err**2)
        dq = np.zeros_like(q)
        dq[rows, batch.actions] = -2.0 * dqn_scale * err / n
        if alpha:
            loss += alpha * np.mean(logsumexp(q) - q_sa)
            dq += alpha * softmax(q) / n
            dq[rows, batch.actions] -= alpha / n
        return loss, dq

    return qnet.value_and_grad(online, batch.obs, loss_fn)


def dqn_loss_independent(online: NetParams, target: NetParams, batch: AgentBatch, gamma: float):
    """Mean squared TD error of one agent; returns ``(loss, grad)``."""
    return _independent(online, target, batch, gamma, 0.0, 1.0)


def cql_loss_independent(online: NetParams, target: NetParams, batch: AgentBatch, gamma: float, alpha: float):
    """Half the DQN loss plus ``alpha`` times the log-sum-exp conservative gap."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return _independent(online, target, batch, gamma, alpha, 0.5)


def conservative_gap(q: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-sample ``logsumexp(Q(o, .)) - Q(o, a)``; always >= 0."""
    return logsumexp(q) - q[np.arange(len(actions)), actions]


def vdn_global_q(per_agent_q: Sequence[float] | np.ndarray) -> float | np.ndarray:
    q = np.asarray(per_agent_q, dtype=float)
    if q.shape[0] < 1:
        raise ValueError("need at least one agent")
    return q.sum(axis=0) if q.ndim > 1 else float(q.sum())


def _ctde(onlines, targets, batch: Minibatch, gamma, alpha, dqn_scale):
    _check(batch)
    _check_gamma(gamma)
    U, n = batch.n_agents, len(batch)
    if len(onlines) != U or len(targets) != U:
        raise ValueError(f"batch has {U} agents but got {len(onlines)} online / {len(targets)} target nets")
    rows = np.arange(n)
    y = batch.rewards + sum(_bootstrap(targets[u], batch, gamma, agent=u) for u in range(U))

    qs, tapes = zip(*(qnet.forward_with_tape(onlines[u], batch.obs[u]) for u in range(U)))
    q_sa = [qs[u][rows, batch.actions[u]] for u in range(U)]
    err = y - vdn_global_q(q_sa)
    loss = dqn_scale * float(np.mean(err**2))
    grads = []
    for u in range(U):
        dq = np.zeros_like(qs[u])
        dq[rows, batch.actions[u]] = -2.0 * dqn_scale * err / n
        if alpha:
            loss += alpha * float(np.mean(logsumexp(qs[u]) - q_sa[u]))
            dq += alpha * softmax(qs[u]) / n
            dq[rows, batch.actions[u]] -= alpha / n
        grads.append(qnet.backward(onlines[u], tapes[u], dq))
    if not np.isfinite(loss):
        raise qnet.NonFiniteLossError(f"loss is not finite: {loss}")
    return loss, grads


def ctde_dqn_loss(onlines, targets, batch: Minibatch, gamma: float):
    """Squared TD error of the summed (value-decomposed) Q; one gradient per agent."""
    return _ctde(onlines, targets, batch, gamma, 0.0, 1.0)


def ctde_cql_loss(onlines, targets, batch: Minibatch, gamma: float, alpha: float):
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return _ctde(onlines, targets, batch, gamma, alpha, 0.5)


class LossResult(NamedTuple):
    value: float
    grads: list
    agent_values: tuple


def compute(algo: str, onlines, targets, batch: Minibatch, gamma: float, alpha: float = 0.0) -> LossResult:
    """Dispatch on an algorithm tag; independent losses are evaluated per agent and summed."""
    if algo in ("i-dqn", "i-cql"):
        per_agent = []
        for u in range(batch.n_agents):
            b = batch.agent(u)
            if algo == "i-dqn":
                per_agent.append(dqn_loss_independent(onlines[u], targets[u], b, gamma))
            else:
                per_agent.append(cql_loss_independent(onlines[u], targets[u], b, gamma, alpha))
        values = tuple(v for v, _ in per_agent)
        return LossResult(float(sum(values)), [g for _, g in per_agent], values)
    if algo == "ctde-dqn":
        value, grads = ctde_dqn_loss(onlines, targets, batch, gamma)
    elif algo == "ctde-cql":
        value, grads = ctde_cql_loss(onlines, targets, batch, gamma, alpha)
    else:
        raise ValueError(f"unknown algorithm {algo!r}; expected one of {ALGOS}")
    return LossResult(value, grads, (value,) * batch.n_agents)
