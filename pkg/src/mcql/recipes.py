"""Experiment sweeps behind the figure presets and the acceptance checks.

Dataset conventions (shared with ``mcql gen-data``): the single-task dataset
for seed ``s`` is recorded with behavior seed ``s``; task ``i`` of a
multi-task run with seed ``1000 * s + i``. Every sweep returns plain
dictionaries of metric series so callers can compare them directly.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data, evaluation, meta, tasks, trainers
from .config import Config
from .env import TaskSpec
from .policies import greedy_policies

logger = logging.getLogger(__name__)


class DatasetCache:
    """Generate-once store for offline datasets, optionally backed by a directory."""

    def __init__(self, root=None):
        self.root = Path(root) if root is not None else None
        self._memory: dict = {}

    def get(self, cfg: Config, task: TaskSpec, seed: int, size: int | None = None) -> data.DatasetBundle:
        size = size or cfg.data.size
        key = f"L{cfg.env.L}_D{cfg.env.D}_U{cfg.env.U}_T{cfg.env.T}_lam{task.lam!r}_lay{task.layout_seed}_n{size}_s{seed}"
        if key in self._memory:
            return self._memory[key]
        path = self.root / key if self.root is not None else None
        if path is not None and data.exists(path):
            bundle = data.load(path, task)
        else:
            steps = round(size / data.RETAIN_FRACTION)
            bundle = data.generate_offline_dataset(cfg.env, task, steps, seed, cfg.behavior, cfg.data.capacity)
            if path is not None:
                data.save(bundle, path)
        self._memory[key] = bundle
        return bundle


def task_specs(cfg: Config) -> list[TaskSpec]:
    """``[data] tasks`` distinct lambdas, log-uniform over the configured or derived range."""
    d = cfg.data
    if d.lam_low is not None and d.lam_high is not None:
        lam_range = tasks.LambdaRange(d.lam_low, d.lam_high, float("nan"), float("nan"))
    else:
        lam_range = tasks.lambda_range(cfg.env, cfg.task.layout_seed, d.lambda_episodes)
    return tasks.sample_tasks(d.tasks, lam_range, np.random.default_rng(d.task_seed), cfg.task.layout_seed)


def task_bundles(cfg: Config, seed: int, cache: DatasetCache) -> list[data.DatasetBundle]:
    return [cache.get(cfg, t, 1000 * seed + i) for i, t in enumerate(task_specs(cfg))]


def _train(bundle, cfg: Config, algo: str, seed: int, epochs=None, init=None):
    tc = replace(cfg.train, algo=algo, seed=seed, epochs=cfg.train.epochs if epochs is None else epochs)
    return trainers.train_offline(bundle, tc, init=init)


def compare(cfg: Config, algos, seeds, cache: DatasetCache | None = None) -> dict:
    """Each algorithm trained on the same per-seed dataset: ``{algo: [history per seed]}``."""
    cache = cache or DatasetCache()
    out = {a: [] for a in algos}
    for s in seeds:
        bundle = cache.get(cfg, cfg.task, s)
        for a in algos:
            out[a].append(_train(bundle, cfg, a, s)[1])
            logger.info("%s seed %d: final reward %.4f", a, s, out[a][-1][-1].reward)
    return out


def shots(cfg: Config, algos, sizes, seeds, cache: DatasetCache | None = None) -> dict:
    """Final greedy reward against dataset size: ``{(algo, size): [final record per seed]}``.

    Smaller datasets are seeded uniform subsamples (without replacement) of
    the largest one.
    """
    cache = cache or DatasetCache()
    full = max(sizes)
    out = {}
    for s in seeds:
        bundle = cache.get(cfg, cfg.task, s, full)
        for n in sizes:
            idx = np.sort(np.random.default_rng([s, n]).choice(bundle.size, size=n, replace=False))
            part = bundle if n == bundle.size else bundle.subset(idx)
            for a in algos:
                out.setdefault((a, n), []).append(_train(part, cfg, a, s)[1][-1])
    return out


def meta_vs_scratch(cfg: Config, variant: str, n_tasks: int, seeds, epochs: int,
                    cache: DatasetCache | None = None) -> dict:
    """Meta-train on the first ``n_tasks`` sampled tasks, fine-tune on the last one.

    Returns ``{"meta": [...], "scratch": [...]}`` per-seed fine-tuning
    histories (``epochs`` epochs each) on the held-out task, from the
    meta-learned and from the random initialization.
    """
    if n_tasks >= cfg.data.tasks:
        raise ValueError(f"need more than {n_tasks} sampled tasks to hold one out (data.tasks={cfg.data.tasks})")
    cache = cache or DatasetCache()
    algo = meta.VARIANTS[variant]
    out = {"meta": [], "scratch": []}
    for s in seeds:
        bundles = task_bundles(cfg, s, cache)
        held = bundles[-1]
        mc = replace(cfg.meta, variant=variant, seed=s)
        theta, _ = meta.meta_train(bundles[:n_tasks], mc)
        out["meta"].append(_train(held, cfg, algo, s, epochs, init=theta)[1])
        out["scratch"].append(_train(held, cfg, algo, s, epochs)[1])
    return out


def lambda_sweep(cfg: Config, algo: str, points: int, seeds, episodes: int | None = None,
                 cache: DatasetCache | None = None) -> dict:
    """Greedy-policy AoI and power for policies trained at ``points`` lambdas over the derived range.

    Returns ``{lam: [aggregate record per seed]}``.
    """
    cache = cache or DatasetCache()
    lam_range = tasks.lambda_range(cfg.env, cfg.task.layout_seed, cfg.data.lambda_episodes)
    episodes = episodes or cfg.eval.episodes
    out = {}
    for lam in lam_range.geometric(points):
        task = TaskSpec(float(lam), cfg.task.layout_seed)
        for s in seeds:
            params, _ = _train(cache.get(cfg, task, s), cfg, algo, s)
            recs = evaluation.rollout(greedy_policies(params), cfg.env, task, episodes, s, algo)
            out.setdefault(float(lam), []).append(evaluation.aggregate(recs))
    return out


def first_epoch_reaching(curve, level: float) -> int | None:
    """Smallest epoch whose value is at least ``level``."""
    for epoch, value in enumerate(curve):
        if value >= level:
            return epoch
    return None


def mean_curve(histories) -> np.ndarray:
    return np.mean([[r.reward for r in h] for h in histories], axis=0)


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _write_summary(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run(cfg: Config, out, seeds=None, cache: DatasetCache | None = None) -> Path:
    """Run the ``[recipe]`` section of ``cfg`` and write its series under ``out``."""
    r = cfg.recipe
    kind = r.get("kind")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = seeds or _ints(r.get("seeds", "0"))
    cache = cache or DatasetCache(out / "datasets")
    emit = evaluation.emit
    if kind == "compare":
        res = compare(cfg, _names(r["algos"]), seeds, cache)
        rows = []
        for algo, hs in res.items():
            for s, h in zip(seeds, hs):
                emit(h, out / algo / f"seed{s}" / "metrics.csv", index_name="epoch")
                rows.append((algo, s, h[-1].reward, h[-1].aoi, h[-1].power))
        _write_summary(out / "summary.csv", ("algo", "seed", "reward", "aoi", "power"), rows)
    elif kind == "shots":
        res = shots(cfg, _names(r["algos"]), _ints(r["shots"]), seeds, cache)
        rows = [(a, n, s, rec.reward, rec.aoi, rec.power) for (a, n), recs in res.items()
                for s, rec in zip(seeds, recs)]
        _write_summary(out / "summary.csv", ("algo", "size", "seed", "reward", "aoi", "power"), rows)
    elif kind == "tasks":
        variant = r.get("variant", cfg.meta.variant)
        epochs = int(r.get("adapt_epochs", 15))
        rows = []
        for n in _ints(r["tasks"]):
            res = meta_vs_scratch(cfg, variant, n, seeds, epochs, cache)
            for init, hs in res.items():
                for s, h in zip(seeds, hs):
                    emit(h, out / f"tasks{n}" / init / f"seed{s}" / "metrics.csv", index_name="epoch")
                    rows.append((n, init, s, h[-1].reward, h[-1].aoi, h[-1].power))
        _write_summary(out / "summary.csv", ("tasks", "init", "seed", "reward", "aoi", "power"), rows)
    elif kind == "lambda":
        res = lambda_sweep(cfg, r.get("algo", cfg.train.algo), int(r.get("points", 3)), seeds, cache=cache)
        rows = [(lam, s, rec.reward, rec.aoi, rec.power) for lam, recs in res.items() for s, rec in zip(seeds, recs)]
        _write_summary(out / "summary.csv", ("lam", "seed", "reward", "aoi", "power"), rows)
    else:
        raise ValueError(f"unknown recipe kind {kind!r}; expected compare, shots, tasks or lambda")
    return out
