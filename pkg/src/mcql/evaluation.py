"""Episode rollouts, metric aggregation and CSV / JSON-lines emission."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import env as envlib
from .env import EnvConfig, TaskSpec
from .policies import PolicyDescriptor, act, greedy_policies

FIELDS = ("reward", "aoi", "weighted_aoi", "power", "loss", "lam", "seed", "algo")


@dataclass(frozen=True)
class MetricsRecord:
    """Per-episode or per-epoch summary.

    ``reward`` is the mean per-step reward, ``aoi`` the time-and-device mean
    of ``A_d(t)``, ``weighted_aoi`` the time mean of ``sum_d delta_d A_d(t)``
    and ``power`` the mean transmit power per step in watts, so
    ``reward == -weighted_aoi - lam * power``.
    """

    index: int
    reward: float
    aoi: float
    weighted_aoi: float
    power: float
    lam: float
    seed: int = 0
    algo: str = ""
    loss: float = math.nan


def run_episode(policies, cfg: EnvConfig, task: TaskSpec, rng: np.random.Generator, trace: list | None = None):
    """One full episode; returns per-step (reward, mean AoI, weighted AoI, power) arrays."""
    state = envlib.reset(cfg, task)
    obs = envlib.observe_all(state, cfg)
    out = np.empty((cfg.T, 4))
    for t in range(cfg.T):
        actions = [act(p, obs[u], t, rng, cfg.D) for u, p in enumerate(policies)]
        state, step = envlib.step(state, actions, cfg, task)
        out[t] = (step.reward, np.mean(state.aoi), step.weighted_aoi, step.power)
        if trace is not None:
            trace.append((obs, actions, step))
        obs = step.observations
    return out


def rollout(policies: list[PolicyDescriptor], cfg: EnvConfig, task: TaskSpec, episodes: int,
            seed: int = 0, algo: str = "") -> list[MetricsRecord]:
    """Run ``episodes`` full episodes; episode ``k`` draws from an rng seeded by ``(seed, k)``."""
    if len(policies) != cfg.U:
        raise ValueError(f"need {cfg.U} policies, got {len(policies)}")
    for p in policies:
        p.check(cfg)
    records = []
    for k in range(episodes):
        rng = np.random.default_rng([seed, k])
        steps = run_episode(policies, cfg, task, rng)
        r, aoi, waoi, pw = steps.mean(axis=0)
        records.append(MetricsRecord(k, float(r), float(aoi), float(waoi), float(pw), task.lam, seed, algo))
    return records


def aggregate(records: list[MetricsRecord], index: int = 0, **overrides) -> MetricsRecord:
    if not records:
        raise ValueError("cannot aggregate an empty series")
    mean = {f: float(np.mean([getattr(r, f) for r in records])) for f in ("reward", "aoi", "weighted_aoi", "power")}
    first = records[0]
    rec = MetricsRecord(index, lam=first.lam, seed=first.seed, algo=first.algo, **mean)
    return replace(rec, **overrides) if overrides else rec


def evaluate_greedy(params_list, cfg: EnvConfig, task: TaskSpec, episodes: int = 1, seed: int = 0,
                    index: int = 0, algo: str = "") -> MetricsRecord:
    return aggregate(rollout(greedy_policies(params_list), cfg, task, episodes, seed, algo), index=index)


def _row(rec: MetricsRecord) -> dict:
    return {k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(rec).items()}


def emit(series: list[MetricsRecord], path, fmt: str = "csv", index_name: str = "index") -> Path:
    """Write a metrics series; columns are ``index_name`` followed by :data:`FIELDS`."""
    path = Path(path)
    columns = (index_name, *FIELDS)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            if fmt == "csv":
                writer = csv.writer(fh)
                writer.writerow(columns)
                for rec in series:
                    row = _row(rec)
                    writer.writerow([row["index"]] + [row[f] for f in FIELDS])
            elif fmt in ("json-lines", "jsonl"):
                fh.write(json.dumps({"columns": list(columns)}) + "\n")
                for rec in series:
                    d = asdict(rec)
                    fh.write(json.dumps({index_name: d.pop("index"), **{f: d[f] for f in FIELDS}}) + "\n")
            else:
                raise ValueError(f"unknown metrics format {fmt!r}; use 'csv' or 'json-lines'")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc.strerror}") from exc
    return path


def read_metrics(path) -> list[MetricsRecord]:
    path = Path(path)
    text = path.read_text().splitlines()
    if not text:
        return []
    if text[0].startswith("{"):
        index_name = json.loads(text[0])["columns"][0]
        rows = [json.loads(line) for line in text[1:]]
    else:
        reader = csv.DictReader(text)
        index_name = reader.fieldnames[0]
        rows = list(reader)
    out = []
    for row in rows:
        out.append(MetricsRecord(
            index=int(row[index_name]),
            reward=float(row["reward"]), aoi=float(row["aoi"]), weighted_aoi=float(row["weighted_aoi"]),
            power=float(row["power"]), lam=float(row["lam"]), seed=int(row["seed"]),
            algo=str(row["algo"]), loss=float(row["loss"]),
        ))
    return out


def format_console(rec: MetricsRecord) -> str:
    """Human-readable line; power shown in picowatts."""
    loss = "" if math.isnan(rec.loss) else f" loss={rec.loss:.4g}"
    return (f"{rec.index:4d} reward={rec.reward:.4f} aoi={rec.aoi:.3f} "
            f"power={rec.power * 1e12:.2f}pW{loss}")
