"""scikit-learn style wrappers around the offline and meta trainers.

``X`` is a :class:`~mcql.data.DatasetBundle` for :class:`OfflineQLearner`
and a list of bundles (one per task) for :class:`MetaCQL`. ``predict`` maps
joint observations ``(U, N, obs_dim)`` to greedy actions ``(U, N)``.
``score`` is the mean per-step reward of the greedy policy on the bundle's task.
"""
from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import meta, qnet
from .evaluation import evaluate_greedy
from .meta import MetaConfig
from .trainers import TrainConfig, train_offline
from .validation import check_bundle, check_bundles, check_observations, check_params


class _GreedyMixin:
    params_: list

    def q_values(self, X) -> np.ndarray:
        """Per-agent Q-values, shape ``(U, N, n_actions)``."""
        check_is_fitted(self, "params_")
        obs = check_observations(X, len(self.params_), self.params_[0].in_dim)
        return np.stack([qnet.forward(p, o) for p, o in zip(self.params_, obs)])

    def predict(self, X) -> np.ndarray:
        """Greedy joint actions, shape ``(U, N)``; ties go to the lowest action id."""
        return np.argmax(self.q_values(X), axis=-1)

    def score(self, X, y=None, episodes: int = 1) -> float:
        check_is_fitted(self, "params_")
        bundle = check_bundle(X)
        check_params(self.params_, bundle.cfg)
        return evaluate_greedy(self.params_, bundle.cfg, bundle.task, episodes, getattr(self, "seed", 0)).reward


class OfflineQLearner(_GreedyMixin, BaseEstimator):
    """Offline I-DQN / CTDE-DQN / I-CQL / CTDE-CQL learner."""

    def __init__(self, algo="ctde-cql", gamma=0.99, alpha=1.0, lr=1e-3, batch_size=128, epochs=100,
                 target_sync=200, eval_episodes=5, seed=0, optimizer="adam", max_grad_norm=None):
        self.algo = algo
        self.gamma = gamma
        self.alpha = alpha
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.target_sync = target_sync
        self.eval_episodes = eval_episodes
        self.seed = seed
        self.optimizer = optimizer
        self.max_grad_norm = max_grad_norm

    def config(self) -> TrainConfig:
        return TrainConfig(**{f.name: getattr(self, f.name) for f in fields(TrainConfig)})

    def fit(self, X, y=None, init=None):
        bundle = check_bundle(X)
        if init is not None:
            init = check_params(init, bundle.cfg)
        self.params_, self.history_ = train_offline(bundle, self.config(), init=init)
        self.n_agents_ = bundle.n_agents
        return self


class MetaCQL(_GreedyMixin, BaseEstimator):
    """MAML over lambda-tasks; ``params_`` is the meta-learned initialization."""

    def __init__(self, variant="m-ctde-cql", inner_lr=1e-2, outer_lr=1e-3, inner_steps=1, epochs=100,
                 first_order=True, outer_optimizer="adam", batch_size=128, gamma=0.99, alpha=1.0,
                 target_sync=200, target_source="meta", max_grad_norm=10.0, support_ratio=0.5,
                 steps_per_epoch=None, eval_episodes=0, seed=0, hvp_eps=1e-4):
        self.variant = variant
        self.inner_lr = inner_lr
        self.outer_lr = outer_lr
        self.inner_steps = inner_steps
        self.epochs = epochs
        self.first_order = first_order
        self.outer_optimizer = outer_optimizer
        self.batch_size = batch_size
        self.gamma = gamma
        self.alpha = alpha
        self.target_sync = target_sync
        self.target_source = target_source
        self.max_grad_norm = max_grad_norm
        self.support_ratio = support_ratio
        self.steps_per_epoch = steps_per_epoch
        self.eval_episodes = eval_episodes
        self.seed = seed
        self.hvp_eps = hvp_eps

    def config(self) -> MetaConfig:
        return MetaConfig(**{f.name: getattr(self, f.name) for f in fields(MetaConfig)})

    def fit(self, X, y=None):
        bundles = check_bundles(X, min_size=2)
        self.params_, self.history_ = meta.meta_train(bundles, self.config())
        self.n_tasks_ = len(bundles)
        return self

    def adapt(self, bundle, k_steps: int = 1, eval_episodes: int = 1):
        """``k_steps`` inner-rate SGD steps on a new task; returns (weights, before, after)."""
        check_is_fitted(self, "params_")
        bundle = check_bundle(bundle)
        check_params(self.params_, bundle.cfg)
        return meta.adapt(self.params_, bundle, k_steps, self.config(), eval_episodes)

    def finetune(self, bundle, **learner_params) -> OfflineQLearner:
        """Epoch-based offline fine-tuning from the meta-learned weights."""
        check_is_fitted(self, "params_")
        learner_params.setdefault("algo", meta.VARIANTS[self.variant])
        learner_params.setdefault("seed", self.seed)
        return OfflineQLearner(**learner_params).fit(bundle, init=self.params_)
