"""Training loops: offline I-DQN / CTDE-DQN / I-CQL / CTDE-CQL and the online behavior DQN."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import data as datalib
from . import env as envlib
from . import losses, qnet
from .env import EnvConfig, TaskSpec
from .evaluation import MetricsRecord, evaluate_greedy
from .policies import greedy_q_action, random_walk_action

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "i-cql"
    gamma: float = 0.99
    alpha: float = 1.0
    lr: float = 1e-3
    batch_size: int = 128
    epochs: int = 100
    target_sync: int = 200
    eval_episodes: int = 5
    seed: int = 0
    optimizer: str = "adam"
    max_grad_norm: float | None = None

    def __post_init__(self):
        if self.algo not in losses.ALGOS:
            raise ValueError(f"unknown algorithm {self.algo!r}; expected one of {losses.ALGOS}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must satisfy 0 <= gamma < 1, got {self.gamma}")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.lr <= 0 or self.batch_size < 1 or self.target_sync < 1 or self.epochs < 0:
            raise ValueError("lr, batch_size and target_sync must be positive, epochs >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")


@dataclass(frozen=True)
class BehaviorConfig:
    """Online epsilon-greedy independent DQN used to record offline data."""

    gamma: float = 0.99
    lr: float = 1e-3
    batch_size: int = 64
    buffer_size: int = 50_000
    learning_starts: int = 500
    train_freq: int = 4
    target_sync: int = 200
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_fraction: float = 0.8
    max_grad_norm: float | None = 10.0

    def epsilon(self, step: int, total: int) -> float:
        horizon = self.eps_fraction * total
        if horizon <= 0 or step >= horizon:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * step / horizon

    def to_dict(self) -> dict:
        return asdict(self)


def _init_nets(cfg: EnvConfig, seed: int) -> list[qnet.NetParams]:
    return [qnet.init(cfg.obs_dim, cfg.n_actions, seed=[seed, u]) for u in range(cfg.U)]


class _Optim:
    """Per-agent Adam or SGD updates sharing one learning rate."""

    def __init__(self, params_list, kind: str, lr: float, max_grad_norm=None):
        self.kind, self.lr, self.max_grad_norm = kind, lr, max_grad_norm
        self.states = [qnet.AdamState.zeros(p) for p in params_list] if kind == "adam" else None

    def step(self, params_list, grads_list):
        out = []
        for u, (p, g) in enumerate(zip(params_list, grads_list)):
            g = qnet.clip_by_global_norm(g, self.max_grad_norm)
            if self.kind == "adam":
                p, self.states[u] = qnet.adam_step(p, g, self.states[u], self.lr)
            else:
                p = qnet.sgd_step(p, g, self.lr)
            out.append(p)
        return out


def train_online_behavior(cfg: EnvConfig, task: TaskSpec, steps: int, seed: int = 0,
                          behavior: BehaviorConfig | None = None, epsilon=None):
    """Online independent DQN with a shared aligned replay buffer.

    Returns the final per-agent parameters and the full chronological trace
    (``steps`` transitions per agent). ``epsilon`` may override the schedule
    with a constant exploration rate.
    """
    if steps < 1:
        raise ValueError(f"steps must be positive, got {steps}")
    b = behavior or BehaviorConfig()
    rng = np.random.default_rng(seed)
    U, F = cfg.U, cfg.obs_dim
    onlines = _init_nets(cfg, seed)
    targets = list(onlines)
    optim = _Optim(onlines, "adam", b.lr, b.max_grad_norm)

    trace = {
        "obs": np.empty((U, steps, F)), "actions": np.empty((U, steps), dtype=np.int64),
        "rewards": np.empty((U, steps)), "next_obs": np.empty((U, steps, F)),
        "done": np.empty((U, steps), dtype=bool), "t": np.empty(steps, dtype=np.int64),
        "episode": np.empty(steps, dtype=np.int64),
    }
    state = envlib.reset(cfg, task)
    obs = envlib.observe_all(state, cfg)
    episode, updates = 0, 0
    for i in range(steps):
        eps = b.epsilon(i, steps) if epsilon is None else epsilon
        actions = []
        for u in range(U):
            if rng.random() < eps:
                actions.append(random_walk_action(rng, cfg.D))
            else:
                actions.append(greedy_q_action(onlines[u], obs[u]))
        t = state.t
        state, out = envlib.step(state, actions, cfg, task)
        trace["obs"][:, i] = obs
        trace["actions"][:, i] = actions
        trace["rewards"][:, i] = out.reward
        trace["next_obs"][:, i] = out.observations
        trace["done"][:, i] = out.done
        trace["t"][i] = t
        trace["episode"][i] = episode
        obs = out.observations
        if out.done:
            state = envlib.reset(cfg, task)
            obs = envlib.observe_all(state, cfg)
            episode += 1

        filled = i + 1
        if filled >= b.learning_starts and filled >= b.batch_size and filled % b.train_freq == 0:
            lo = max(0, filled - b.buffer_size)
            idx = lo + rng.choice(filled - lo, size=b.batch_size, replace=False)
            batch = losses.Minibatch(
                trace["obs"][:, idx], trace["actions"][:, idx], trace["rewards"][0, idx],
                trace["next_obs"][:, idx], trace["done"][0, idx],
            )
            res = losses.compute("i-dqn", onlines, targets, batch, b.gamma)
            onlines = optim.step(onlines, res.grads)
            updates += 1
            if updates % b.target_sync == 0:
                targets = list(onlines)
    return onlines, trace


def train_offline(bundle: datalib.DatasetBundle, cfg: TrainConfig, init=None, eval_task: TaskSpec | None = None,
                  callback=None):
    """Offline training on a fixed dataset.

    One epoch is one shuffled pass over the bundle. Returns the final
    per-agent parameters and a metrics series whose entry 0 evaluates the
    initial parameters and entry ``e`` the parameters after epoch ``e``.
    """
    env_cfg = bundle.cfg
    task = eval_task or bundle.task
    rng = np.random.default_rng(cfg.seed)
    onlines = list(init) if init is not None else _init_nets(env_cfg, cfg.seed)
    for p in onlines:
        if (p.in_dim, p.out_dim) != (env_cfg.obs_dim, env_cfg.n_actions):
            raise ValueError(f"network {p.in_dim}->{p.out_dim} does not match dataset "
                             f"{env_cfg.obs_dim}->{env_cfg.n_actions}")
    if len(onlines) != bundle.n_agents:
        raise ValueError(f"{len(onlines)} networks for {bundle.n_agents} agents")
    targets = list(onlines)
    optim = _Optim(onlines, cfg.optimizer, cfg.lr, cfg.max_grad_norm)

    def evaluate(epoch, loss):
        if cfg.eval_episodes <= 0:
            return MetricsRecord(epoch, np.nan, np.nan, np.nan, np.nan, task.lam, cfg.seed, cfg.algo, loss)
        rec = evaluate_greedy(onlines, env_cfg, task, cfg.eval_episodes, cfg.seed, epoch, cfg.algo)
        return MetricsRecord(epoch, rec.reward, rec.aoi, rec.weighted_aoi, rec.power, task.lam,
                             cfg.seed, cfg.algo, loss)

    history = [evaluate(0, np.nan)]
    steps = 0
    for epoch in range(1, cfg.epochs + 1):
        epoch_loss = []
        for batch in datalib.iter_minibatches(bundle, cfg.batch_size, rng):
            res = losses.compute(cfg.algo, onlines, targets, batch, cfg.gamma, cfg.alpha)
            onlines = optim.step(onlines, res.grads)
            epoch_loss.append(res.value)
            steps += 1
            if steps % cfg.target_sync == 0:
                targets = list(onlines)
        if not all(p.is_finite() for p in onlines):
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")
        history.append(evaluate(epoch, float(np.mean(epoch_loss))))
        logger.debug("epoch %d: %s", epoch, history[-1])
        if callback is not None:
            callback(epoch, onlines, history[-1])
    return onlines, history
