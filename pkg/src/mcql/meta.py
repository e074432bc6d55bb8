"""MAML over lambda-tasks on top of the CQL losses.

Each task owns an offline bundle split into support and query parts. A
meta-step adapts the shared initial weights to every task with plain SGD on
the support set, evaluates the CQL loss of the adapted weights on the query
set, and sums those losses over tasks. The outer update applies the summed
gradient to the initial weights.

The default meta-gradient is first order (the adapted weights' gradient is
used as is). With ``first_order=False`` the inner Jacobian ``I - lr * H`` is
applied through Hessian-vector products taken by central differences of the
exact gradients.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import data as datalib
from . import losses, qnet
from .evaluation import MetricsRecord, aggregate, evaluate_greedy
from .trainers import TrainConfig, _init_nets, _Optim, train_offline

VARIANTS = {"m-i-cql": "i-cql", "m-ctde-cql": "ctde-cql"}


@dataclass(frozen=True)
class MetaConfig:
    variant: str = "m-ctde-cql"
    inner_lr: float = 1e-2
    outer_lr: float = 1e-3
    inner_steps: int = 1
    epochs: int = 100
    first_order: bool = True
    outer_optimizer: str = "adam"
    batch_size: int = 128
    gamma: float = 0.99
    alpha: float = 1.0
    target_sync: int = 200
    target_source: str = "meta"
    max_grad_norm: float | None = 10.0
    support_ratio: float = 0.5
    steps_per_epoch: int | None = None
    eval_episodes: int = 0
    seed: int = 0
    hvp_eps: float = 1e-4

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown meta variant {self.variant!r}; expected one of {tuple(VARIANTS)}")
        if self.inner_lr < 0 or self.outer_lr <= 0:
            raise ValueError("inner_lr must be >= 0 and outer_lr > 0")
        if self.inner_steps < 0:
            raise ValueError(f"inner_steps must be >= 0, got {self.inner_steps}")
        if self.outer_optimizer not in ("adam", "sgd"):
            raise ValueError(f"outer_optimizer must be 'adam' or 'sgd', got {self.outer_optimizer!r}")
        if not 0 <= self.gamma < 1 or self.alpha < 0:
            raise ValueError("need 0 <= gamma < 1 and alpha >= 0")
        if self.target_source not in ("meta", "adapted"):
            raise ValueError(f"target_source must be 'meta' or 'adapted', got {self.target_source!r}")

    @property
    def algo(self) -> str:
        return VARIANTS[self.variant]


@dataclass
class TaskContext:
    """One training task: its support/query parts and its own target networks."""

    support: datalib.DatasetBundle
    query: datalib.DatasetBundle
    targets: list = field(default_factory=list)
    adapted: list = field(default_factory=list)

    @property
    def task(self):
        return self.support.task

    @classmethod
    def from_bundle(cls, bundle, thetas, ratio=0.5, seed=0) -> "TaskContext":
        support, query = datalib.split_support_query(bundle, ratio, seed).parts(bundle)
        return cls(support, query, list(thetas), list(thetas))


def _loss(cfg: MetaConfig, thetas, targets, batch) -> losses.LossResult:
    return losses.compute(cfg.algo, thetas, targets, batch, cfg.gamma, cfg.alpha)


def _batch(part: datalib.DatasetBundle, cfg: MetaConfig, rng) -> losses.Minibatch:
    return datalib.sample_minibatch(part, min(cfg.batch_size, part.size), rng)


def inner_update(thetas, support: datalib.DatasetBundle, cfg: MetaConfig, rng: np.random.Generator,
                 targets=None, trajectory: list | None = None) -> list[qnet.NetParams]:
    """``inner_steps`` plain SGD steps on the support CQL loss; ``thetas`` is not modified.

    If ``trajectory`` is given it receives ``(params, batch)`` for each step,
    which the second-order meta-gradient needs.
    """
    if support.size == 0:
        raise datalib.DatasetError("support set is empty")
    targets = list(thetas) if targets is None else targets
    current = list(thetas)
    for _ in range(cfg.inner_steps):
        batch = _batch(support, cfg, rng)
        res = _loss(cfg, current, targets, batch)
        if trajectory is not None:
            trajectory.append((current, batch))
        current = [qnet.sgd_step(p, qnet.clip_by_global_norm(g, cfg.max_grad_norm), cfg.inner_lr)
                   for p, g in zip(current, res.grads)]
    return current


def _hvp(cfg: MetaConfig, thetas, targets, batch, vecs) -> list[qnet.NetParams]:
    """Hessian of the (joint) support loss times ``vecs``, by central differences of gradients."""
    norm = math.sqrt(sum(qnet.global_norm(v) ** 2 for v in vecs))
    if norm == 0:
        return [qnet.zeros_like(v) for v in vecs]
    eps = cfg.hvp_eps / norm
    plus = [p.map(lambda a, b: a + eps * b, v) for p, v in zip(thetas, vecs)]
    minus = [p.map(lambda a, b: a - eps * b, v) for p, v in zip(thetas, vecs)]
    g_plus = _loss(cfg, plus, targets, batch).grads
    g_minus = _loss(cfg, minus, targets, batch).grads
    return [gp.map(lambda a, b: (a - b) / (2 * eps), gm) for gp, gm in zip(g_plus, g_minus)]


class MetaLossResult(NamedTuple):
    values: np.ndarray  # per-agent meta-loss
    grads: list
    adapted: list  # adapted parameters per task


def meta_loss(thetas, contexts: list[TaskContext], cfg: MetaConfig, rng: np.random.Generator) -> MetaLossResult:
    """Sum over tasks of the query CQL loss at the task-adapted weights, with its meta-gradient."""
    if not contexts:
        raise ValueError("meta-loss needs at least one task")
    U = len(thetas)
    values = np.zeros(U)
    total = [qnet.zeros_like(p) for p in thetas]
    adapted_all = []
    for ctx in contexts:
        if ctx.support is None or ctx.query is None:
            raise datalib.DatasetError("every task needs a support and a query part")
        trajectory = [] if not cfg.first_order else None
        adapted = inner_update(thetas, ctx.support, cfg, rng, ctx.targets, trajectory)
        res = _loss(cfg, adapted, ctx.targets, _batch(ctx.query, cfg, rng))
        grads = res.grads
        if trajectory:
            for params, batch in reversed(trajectory):
                hv = _hvp(cfg, params, ctx.targets, batch, grads)
                grads = [g.map(lambda a, b: a - cfg.inner_lr * b, h) for g, h in zip(grads, hv)]
        values += np.asarray(res.agent_values)
        total = [t.map(np.add, g) for t, g in zip(total, grads)]
        adapted_all.append(adapted)
    return MetaLossResult(values, total, adapted_all)


def outer_update(thetas, meta_grads, optim: _Optim):
    """Adam (or literal SGD) step of the initial weights along the meta-gradient."""
    for p, g in zip(thetas, meta_grads):
        qnet.check_same_shape(p, g)
    return optim.step(thetas, meta_grads)


def make_outer_optimizer(thetas, cfg: MetaConfig) -> _Optim:
    return _Optim(thetas, cfg.outer_optimizer, cfg.outer_lr, cfg.max_grad_norm)


def _check_bundles(bundles):
    if not bundles:
        raise ValueError("meta-training needs at least one task bundle")
    ref = bundles[0].cfg
    lams = [b.task.lam for b in bundles]
    for b in bundles[1:]:
        if (b.cfg.obs_dim, b.cfg.n_actions, b.cfg.U) != (ref.obs_dim, ref.n_actions, ref.U):
            raise ValueError("all task bundles must share observation/action dimensions and U")
    if len(set(lams)) != len(lams):
        raise ValueError(f"task lambdas must be distinct, got {lams}")


def meta_train(bundles, cfg: MetaConfig, init=None, callback=None):
    """Meta-train initial weights over one bundle per task.

    One epoch is ``steps_per_epoch`` meta-steps, by default enough support
    minibatches to cover the smallest support set once. Returns the initial
    per-agent weights and per-epoch records (``loss`` = mean summed meta-loss,
    reward fields = zero-shot evaluation averaged over the training tasks when
    ``eval_episodes > 0``).
    """
    _check_bundles(bundles)
    env_cfg = bundles[0].cfg
    rng = np.random.default_rng(cfg.seed)
    thetas = list(init) if init is not None else _init_nets(env_cfg, cfg.seed)
    contexts = [TaskContext.from_bundle(b, thetas, cfg.support_ratio, cfg.seed + i) for i, b in enumerate(bundles)]
    steps = cfg.steps_per_epoch or datalib.batches_per_epoch(min(c.support.size for c in contexts), cfg.batch_size)
    optim = make_outer_optimizer(thetas, cfg)

    def evaluate(epoch, loss):
        if cfg.eval_episodes <= 0:
            return MetricsRecord(epoch, np.nan, np.nan, np.nan, np.nan, np.nan, cfg.seed, cfg.variant, loss)
        recs = [evaluate_greedy(thetas, c.support.cfg, c.task, cfg.eval_episodes, cfg.seed, epoch) for c in contexts]
        return aggregate(recs, index=epoch, lam=np.nan, seed=cfg.seed, algo=cfg.variant, loss=loss)

    history = [evaluate(0, np.nan)]
    meta_steps = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_loss = []
        for _ in range(steps):
            res = meta_loss(thetas, contexts, cfg, rng)
            thetas = outer_update(thetas, res.grads, optim)
            for ctx, adapted in zip(contexts, res.adapted):
                ctx.adapted = adapted
            meta_steps += 1
            if meta_steps % cfg.target_sync == 0:
                for ctx in contexts:
                    ctx.targets = list(thetas if cfg.target_source == "meta" else ctx.adapted)
            epoch_loss.append(float(res.values.mean()))
        if not all(p.is_finite() for p in thetas):
            raise FloatingPointError(f"non-finite meta-parameters after epoch {epoch}")
        history.append(evaluate(epoch, float(np.mean(epoch_loss))))
        if callback is not None:
            callback(epoch, thetas, history[-1])
    return thetas, history


def adapt(theta_init, bundle: datalib.DatasetBundle, k_steps: int, cfg: MetaConfig, eval_episodes: int = 1):
    """``k_steps`` SGD steps (rate ``inner_lr``) of the task's CQL loss from ``theta_init``.

    Returns the adapted weights and the greedy evaluation before and after.
    """
    if k_steps < 0:
        raise ValueError(f"k_steps must be >= 0, got {k_steps}")
    rng = np.random.default_rng(cfg.seed)
    before = evaluate_greedy(theta_init, bundle.cfg, bundle.task, eval_episodes, cfg.seed, 0, cfg.variant)
    thetas, targets = list(theta_init), list(theta_init)
    for k in range(1, k_steps + 1):
        res = _loss(cfg, thetas, targets, _batch(bundle, cfg, rng))
        thetas = [qnet.sgd_step(p, g, cfg.inner_lr) for p, g in zip(thetas, res.grads)]
        if k % cfg.target_sync == 0:
            targets = list(thetas)
    if k_steps == 0:
        return list(theta_init), before, before
    after = evaluate_greedy(thetas, bundle.cfg, bundle.task, eval_episodes, cfg.seed, k_steps, cfg.variant)
    return thetas, before, after


def finetune(theta_init, bundle: datalib.DatasetBundle, train_cfg: TrainConfig, eval_task=None):
    """Epoch-based offline fine-tuning from meta-learned weights (same loop as :func:`train_offline`)."""
    return train_offline(bundle, train_cfg, init=theta_init, eval_task=eval_task)
