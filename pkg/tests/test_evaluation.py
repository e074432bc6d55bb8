import json
import math

import numpy as np
import pytest

from mcql import evaluation, qnet
from mcql.env import EnvConfig, TaskSpec
from mcql.evaluation import FIELDS, MetricsRecord
from mcql.policies import PolicyDescriptor, deterministic_policies, random_policy


def test_never_served_device_mean_aoi_is_three():
    cfg = EnvConfig(L=3, D=1, U=1, T=3, delta=(1.0,))
    # east, east, west: the UAV keeps moving so the device is never served
    route = PolicyDescriptor("deterministic", route=(0, 0, 1))
    rec = evaluation.rollout([route], cfg, TaskSpec(5.0, 0), 1)[0]
    assert rec.aoi == 3.0 and rec.weighted_aoi == 3.0
    assert rec.power == 0.0 and rec.reward == -3.0


@pytest.mark.parametrize("lam", [0.0, 1e9, 5e10])
def test_reward_decomposes_into_aoi_and_power(desk, lam):
    recs = evaluation.rollout([random_policy()] * desk.U, desk, TaskSpec(lam, 1), 5, seed=3)
    for r in recs:
        expected = -r.weighted_aoi - lam * r.power
        assert r.reward == pytest.approx(expected, rel=1e-9, abs=1e-12)
        assert r.aoi >= 1 and r.power >= 0


def test_same_seed_same_series(desk):
    a = evaluation.rollout([random_policy()] * 2, desk, TaskSpec(1e9, 0), 4, seed=9)
    b = evaluation.rollout([random_policy()] * 2, desk, TaskSpec(1e9, 0), 4, seed=9)
    c = evaluation.rollout([random_policy()] * 2, desk, TaskSpec(1e9, 0), 4, seed=10)
    assert a == b and a != c


def test_aggregation_order_invariant(desk):
    recs = evaluation.rollout([random_policy()] * 2, desk, TaskSpec(1e9, 0), 6, seed=1)
    fwd, rev = evaluation.aggregate(recs), evaluation.aggregate(recs[::-1])
    for f in ("reward", "aoi", "weighted_aoi", "power"):
        assert getattr(fwd, f) == pytest.approx(getattr(rev, f), rel=1e-12)


def test_episode_seeds_independent_of_count(desk):
    short = evaluation.rollout([random_policy()] * 2, desk, TaskSpec(), 2, seed=4)
    long = evaluation.rollout([random_policy()] * 2, desk, TaskSpec(), 5, seed=4)
    assert long[:2] == short


def test_deterministic_baseline_serves_devices(desk):
    task = TaskSpec(0.0, 0)
    det = evaluation.aggregate(evaluation.rollout(deterministic_policies(desk, task), desk, task, 1))
    rw = evaluation.aggregate(evaluation.rollout([random_policy()] * 2, desk, task, 20))
    assert det.aoi < rw.aoi


def test_policy_count_and_dims(desk):
    with pytest.raises(ValueError):
        evaluation.rollout([random_policy()], desk, TaskSpec(), 1)
    with pytest.raises(ValueError):
        evaluation.rollout([PolicyDescriptor("deterministic", route=(999,))] * 2, desk, TaskSpec(), 1)


def _series():
    return [MetricsRecord(i, -1.0 / 3 - i, 2.5 + i, 2.25, 3.1e-11 * (i + 1), 2e9, 7, "ctde-cql", 0.1 * i)
            for i in range(3)]


@pytest.mark.parametrize("fmt,name", [("csv", "m.csv"), ("json-lines", "m.jsonl")])
def test_emit_round_trip(tmp_path, fmt, name):
    series = _series()
    path = evaluation.emit(series, tmp_path / name, fmt)
    assert evaluation.read_metrics(path) == series


def test_column_order(tmp_path):
    path = evaluation.emit(_series(), tmp_path / "m.csv", index_name="epoch")
    header = path.read_text().splitlines()[0]
    assert header == "epoch,reward,aoi,weighted_aoi,power,loss,lam,seed,algo"
    assert FIELDS == ("reward", "aoi", "weighted_aoi", "power", "loss", "lam", "seed", "algo")
    jl = evaluation.emit(_series(), tmp_path / "m.jsonl", "json-lines", index_name="epoch")
    first = jl.read_text().splitlines()[1]
    assert list(json.loads(first)) == ["epoch", *FIELDS]


def test_full_precision(tmp_path):
    path = evaluation.emit(_series(), tmp_path / "m.csv")
    assert "-0.3333333333333333" in path.read_text()


def test_empty_series_header_only(tmp_path):
    path = evaluation.emit([], tmp_path / "m.csv")
    assert path.read_text().splitlines() == ["index,reward,aoi,weighted_aoi,power,loss,lam,seed,algo"]
    assert evaluation.read_metrics(path) == []


def test_unwritable_path_reports_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError, match="file"):
        evaluation.emit(_series(), blocker / "m.csv")


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        evaluation.emit(_series(), tmp_path / "m.txt", "xml")


def test_console_shows_picowatts():
    line = evaluation.format_console(MetricsRecord(3, -2.0, 1.5, 1.5, 3.1e-11, 0.0))
    assert "power=31.00pW" in line and "loss" not in line
    assert "loss=0.5" in evaluation.format_console(MetricsRecord(3, -2.0, 1.5, 1.5, 0.0, 0.0, loss=0.5))


def test_greedy_evaluation_matches_rollout(desk):
    params = [qnet.init(desk.obs_dim, desk.n_actions, seed=[1, u], hidden=(8,)) for u in range(desk.U)]
    rec = evaluation.evaluate_greedy(params, desk, TaskSpec(1e9, 0), 2, seed=0)
    assert math.isfinite(rec.reward) and rec.lam == 1e9
    steps = evaluation.run_episode(
        [PolicyDescriptor("greedy-q", params=p) for p in params], desk, TaskSpec(1e9, 0), np.random.default_rng(0))
    assert rec.reward == pytest.approx(steps[:, 0].mean(), rel=1e-12)
