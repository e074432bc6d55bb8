"""Offline experience datasets: generation, persistence, support/query splits, sampling.

A :class:`DatasetBundle` stores one transition sequence per UAV. Index ``i``
refers to the same environment step for every agent, so the cooperative
reward is shared and CTDE minibatches stay aligned.

On disk a bundle is a directory with ``transitions.jsonl`` (a versioned header
line, then one JSON record per transition per agent) and ``metadata.json``.
Floats are written with ``repr`` precision, which round-trips bit-exactly.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import env as envlib
from .env import EnvConfig, TaskSpec
from .losses import Minibatch

FORMAT_NAME = "mcql-offline-dataset"
FORMAT_VERSION = 1
RETAIN_FRACTION = 0.1


class DatasetError(ValueError):
    """Malformed, inconsistent or mismatched dataset."""


@dataclass(frozen=True)
class Transition:
    agent: int
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool
    t: int
    episode: int = 0


@dataclass
class DatasetBundle:
    """Per-agent transition arrays of equal length ``N``.

    Shapes: ``obs``/``next_obs`` ``(U, N, 2 + D)``; ``actions``/``rewards``/
    ``done`` ``(U, N)``; ``t``/``episode`` ``(N,)``.
    """

    cfg: EnvConfig
    task: TaskSpec
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray
    t: np.ndarray
    episode: np.ndarray
    behavior: dict = field(default_factory=dict)
    seed: int | None = None
    capacity: int | None = None

    def __post_init__(self):
        self.obs = np.asarray(self.obs, dtype=float)
        self.next_obs = np.asarray(self.next_obs, dtype=float)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        self.done = np.asarray(self.done, dtype=bool)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.episode = np.asarray(self.episode, dtype=np.int64)
        self.validate()

    @property
    def n_agents(self) -> int:
        return self.actions.shape[0]

    @property
    def size(self) -> int:
        """Entries per agent."""
        return self.actions.shape[1]

    def __len__(self):
        return self.size

    def validate(self):
        U, N = self.actions.shape
        F = self.cfg.obs_dim
        if U != self.cfg.U:
            raise DatasetError(f"dataset has {U} agents, environment has U={self.cfg.U}")
        if self.obs.shape != (U, N, F) or self.next_obs.shape != (U, N, F):
            raise DatasetError(f"observation arrays must have shape {(U, N, F)}, got {self.obs.shape}")
        for name in ("rewards", "done"):
            if getattr(self, name).shape != (U, N):
                raise DatasetError(f"{name} must have shape {(U, N)}")
        if self.t.shape != (N,) or self.episode.shape != (N,):
            raise DatasetError("t and episode must have one entry per aligned index")
        if N and (self.actions.min() < 0 or self.actions.max() >= self.cfg.n_actions):
            raise DatasetError(f"action ids must lie in [0, {self.cfg.n_actions})")
        if not np.isfinite(self.rewards).all():
            raise DatasetError("rewards must be finite")
        if U > 1 and not (self.rewards == self.rewards[0]).all():
            raise DatasetError("cooperative reward differs across agents at the same index")
        if self.capacity is not None and N > self.capacity:
            raise DatasetError(f"dataset holds {N} entries per agent, above the capacity c_th={self.capacity}")

    def subset(self, indices) -> "DatasetBundle":
        idx = np.asarray(indices, dtype=np.int64)
        return DatasetBundle(
            self.cfg, self.task, self.obs[:, idx], self.actions[:, idx], self.rewards[:, idx],
            self.next_obs[:, idx], self.done[:, idx], self.t[idx], self.episode[idx],
            dict(self.behavior), self.seed, self.capacity,
        )

    def transitions(self, agent: int) -> Iterator[Transition]:
        for i in range(self.size):
            yield Transition(
                agent, self.obs[agent, i], int(self.actions[agent, i]), float(self.rewards[agent, i]),
                self.next_obs[agent, i], bool(self.done[agent, i]), int(self.t[i]), int(self.episode[i]),
            )

    def minibatch(self, indices) -> Minibatch:
        idx = np.asarray(indices, dtype=np.int64)
        return Minibatch(
            obs=self.obs[:, idx], actions=self.actions[:, idx], rewards=self.rewards[0, idx],
            next_obs=self.next_obs[:, idx], done=self.done[0, idx],
        )

    def equals(self, other: "DatasetBundle") -> bool:
        arrays = ("obs", "actions", "rewards", "next_obs", "done", "t", "episode")
        return (
            self.cfg == other.cfg and self.task == other.task and self.seed == other.seed
            and self.behavior == other.behavior and self.capacity == other.capacity
            and all(np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays)
        )


def generate_offline_dataset(cfg: EnvConfig, task: TaskSpec, total_online_steps: int, seed: int = 0,
                             behavior=None, capacity: int | None = None) -> DatasetBundle:
    """Train an online independent DQN and keep the last 10% of its experience."""
    from .trainers import BehaviorConfig, train_online_behavior

    behavior = behavior or BehaviorConfig()
    keep = int(total_online_steps * RETAIN_FRACTION)
    if keep < 1:
        raise DatasetError(f"{total_online_steps} online steps leave no entries after keeping the last 10%")
    _, trace = train_online_behavior(cfg, task, total_online_steps, seed, behavior)
    tail = slice(total_online_steps - keep, total_online_steps)
    kept = {k: (v[tail] if k in ("t", "episode") else v[:, tail]) for k, v in trace.items()}
    descriptor = {"kind": "online-i-dqn", "online_steps": int(total_online_steps), **behavior.to_dict()}
    return DatasetBundle(cfg, task, **kept, behavior=descriptor, seed=seed, capacity=capacity)


@dataclass(frozen=True)
class SupportQuerySplit:
    support: np.ndarray
    query: np.ndarray
    ratio: float

    def parts(self, bundle: DatasetBundle) -> tuple[DatasetBundle, DatasetBundle]:
        return bundle.subset(self.support), bundle.subset(self.query)


def split_support_query(bundle: DatasetBundle, ratio: float = 0.5, seed: int = 0) -> SupportQuerySplit:
    """Uniform random disjoint split; ``ratio`` is the support fraction.

    Indices are shared by all agents so the split parts stay aligned.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    n = bundle.size
    n_support = int(round(ratio * n))
    if n_support < 1 or n - n_support < 1:
        raise DatasetError(f"dataset of {n} entries is too small to split at ratio {ratio}")
    perm = np.random.default_rng(seed).permutation(n)
    return SupportQuerySplit(np.sort(perm[:n_support]), np.sort(perm[n_support:]), ratio)


def sample_minibatch(bundle: DatasetBundle, batch_size: int, rng: np.random.Generator) -> Minibatch:
    if not 1 <= batch_size <= bundle.size:
        raise ValueError(f"batch size {batch_size} outside [1, {bundle.size}]")
    return bundle.minibatch(rng.choice(bundle.size, size=batch_size, replace=False))


def iter_minibatches(bundle: DatasetBundle, batch_size: int, rng: np.random.Generator) -> Iterator[Minibatch]:
    """One shuffled pass; the final batch may be smaller."""
    perm = rng.permutation(bundle.size)
    for start in range(0, bundle.size, batch_size):
        yield bundle.minibatch(perm[start : start + batch_size])


def batches_per_epoch(size: int, batch_size: int) -> int:
    return math.ceil(size / batch_size)


def _state_from_obs(cfg: EnvConfig, obs_all: np.ndarray, t: int) -> envlib.EnvState:
    pos = tuple((int(round(o[0] * (cfg.L - 1))), int(round(o[1] * (cfg.L - 1)))) for o in obs_all)
    aoi = tuple(int(round(a * cfg.T)) for a in obs_all[0, 2:])
    return envlib.EnvState(uav_pos=pos, aoi=aoi, t=int(t))


def replay_mismatches(bundle: DatasetBundle) -> list[int]:
    """Indices whose stored reward or next observations differ from a fresh environment step."""
    cfg, task = bundle.cfg, bundle.task
    bad = []
    for i in range(bundle.size):
        state = _state_from_obs(cfg, bundle.obs[:, i], bundle.t[i])
        _, out = envlib.step(state, [int(a) for a in bundle.actions[:, i]], cfg, task)
        if not (np.array_equal(out.observations, bundle.next_obs[:, i])
                and (bundle.rewards[:, i] == out.reward).all()
                and (bundle.done[:, i] == out.done).all()):
            bad.append(i)
    return bad


def _metadata(bundle: DatasetBundle) -> dict:
    cfg = asdict(bundle.cfg)
    cfg["delta"] = list(cfg["delta"])
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "env": cfg,
        "task": asdict(bundle.task),
        "behavior": bundle.behavior,
        "seed": bundle.seed,
        "size": bundle.size,
        "n_agents": bundle.n_agents,
        "capacity": bundle.capacity,
    }


def save(bundle: DatasetBundle, path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metadata.json", "w") as fh:
        json.dump(_metadata(bundle), fh, indent=2)
    with open(out / "transitions.jsonl", "w") as fh:
        fh.write(json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION}) + "\n")
        for u in range(bundle.n_agents):
            for i in range(bundle.size):
                record = {
                    "agent": u,
                    "episode": int(bundle.episode[i]),
                    "t": int(bundle.t[i]),
                    "obs": [float(x) for x in bundle.obs[u, i]],
                    "action": int(bundle.actions[u, i]),
                    "reward": float(bundle.rewards[u, i]),
                    "next_obs": [float(x) for x in bundle.next_obs[u, i]],
                    "done": bool(bundle.done[u, i]),
                }
                fh.write(json.dumps(record) + "\n")
    return out


def _check_version(header: dict, where: str):
    if header.get("format") != FORMAT_NAME:
        raise DatasetError(f"{where}: not an offline dataset (format={header.get('format')!r})")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{where}: dataset version {header.get('version')} is not supported "
                           f"(expected {FORMAT_VERSION})")


def load(path, task: TaskSpec | None = None) -> DatasetBundle:
    """Read a dataset directory; refuses a bundle recorded for a different ``task``."""
    root = Path(path)
    meta_path, rec_path = root / "metadata.json", root / "transitions.jsonl"
    for p in (meta_path, rec_path):
        if not p.exists():
            raise DatasetError(f"missing {p.name} in dataset directory {root}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{meta_path}: invalid JSON ({exc})") from None
    _check_version(meta, str(meta_path))
    env_kw = dict(meta["env"])
    env_kw["delta"] = tuple(env_kw["delta"])
    cfg = EnvConfig(**env_kw)
    stored_task = TaskSpec(**meta["task"])
    if task is not None and task.lam != stored_task.lam:
        raise DatasetError(f"{root}: dataset was recorded for lambda={stored_task.lam!r}, "
                           f"requested task has lambda={task.lam!r}")
    if task is not None and task.layout_seed != stored_task.layout_seed:
        raise DatasetError(f"{root}: dataset layout_seed={stored_task.layout_seed} does not match "
                           f"requested layout_seed={task.layout_seed}")

    U, N, F = int(meta["n_agents"]), int(meta["size"]), cfg.obs_dim
    obs = np.empty((U, N, F))
    next_obs = np.empty((U, N, F))
    actions = np.empty((U, N), dtype=np.int64)
    rewards = np.empty((U, N))
    done = np.empty((U, N), dtype=bool)
    t = np.empty(N, dtype=np.int64)
    episode = np.empty(N, dtype=np.int64)
    counts = np.zeros(U, dtype=np.int64)
    lineno = 0

    with open(rec_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{rec_path}:{lineno}: cannot parse record ({exc.msg})") from None
            if lineno == 1:
                _check_version(record, f"{rec_path}:1")
                continue
            try:
                u = int(record["agent"])
                i = counts[u]
                if i >= N:
                    raise DatasetError(f"{rec_path}:{lineno}: more records for agent {u} than size {N}")
                obs[u, i] = record["obs"]
                next_obs[u, i] = record["next_obs"]
                actions[u, i] = record["action"]
                rewards[u, i] = record["reward"]
                done[u, i] = record["done"]
                t[i] = record["t"]
                episode[i] = record["episode"]
                counts[u] += 1
            except (KeyError, TypeError, ValueError, IndexError) as exc:
                if isinstance(exc, DatasetError):
                    raise
                raise DatasetError(f"{rec_path}:{lineno}: malformed record ({exc!r})") from None
    if (counts != N).any():
        raise DatasetError(f"{rec_path}: expected {N} records per agent, found {counts.tolist()} "
                           f"(file truncated after line {lineno})")
    return DatasetBundle(cfg, stored_task, obs, actions, rewards, next_obs, done, t, episode,
                         behavior=meta.get("behavior") or {}, seed=meta.get("seed"),
                         capacity=meta.get("capacity"))


def exists(path) -> bool:
    return os.path.exists(Path(path) / "metadata.json")
