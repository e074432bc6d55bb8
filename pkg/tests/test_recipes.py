import csv
from dataclasses import replace

import pytest

from mcql import cli, config, recipes

TINY = """
[env]
L = 3
D = 2
T = 10
[task]
lam = 1e9
[data]
size = 30
tasks = 3
lambda_episodes = 10
[behavior]
learning_starts = 60
batch_size = 16
[train]
epochs = 2
batch_size = 16
eval_episodes = 1
[meta]
epochs = 2
batch_size = 8
[eval]
episodes = 2
"""


@pytest.fixture(scope="module")
def cfg():
    return config.parse(TINY)


@pytest.fixture(scope="module")
def cache():
    return recipes.DatasetCache()


def test_cache_reuses_bundles(cfg, cache, tmp_path):
    a = cache.get(cfg, cfg.task, 0)
    assert cache.get(cfg, cfg.task, 0) is a
    disk = recipes.DatasetCache(tmp_path)
    b = disk.get(cfg, cfg.task, 0)
    assert b.equals(a)
    assert recipes.DatasetCache(tmp_path).get(cfg, cfg.task, 0).equals(a)


def test_compare_uses_one_dataset_per_seed(cfg, cache):
    res = recipes.compare(cfg, ["i-dqn", "i-cql"], [0, 1], cache)
    assert [len(v) for v in res.values()] == [2, 2]
    assert all(len(h) == 3 for h in res["i-cql"])


def test_shots_subsamples(cfg, cache):
    res = recipes.shots(cfg, ["ctde-cql"], [10, 30], [0], cache)
    assert set(res) == {("ctde-cql", 10), ("ctde-cql", 30)}


def test_meta_vs_scratch(cfg, cache):
    res = recipes.meta_vs_scratch(cfg, "m-i-cql", 2, [0], 1, cache)
    assert len(res["meta"][0]) == len(res["scratch"][0]) == 2
    with pytest.raises(ValueError):
        recipes.meta_vs_scratch(cfg, "m-i-cql", 3, [0], 1, cache)


def test_lambda_sweep(cfg, cache):
    res = recipes.lambda_sweep(cfg, "ctde-cql", 2, [0], episodes=2, cache=cache)
    assert len(res) == 2 and all(len(v) == 1 for v in res.values())


def test_first_epoch_reaching():
    assert recipes.first_epoch_reaching([-5, -3, -1, -2], -2.5) == 2
    assert recipes.first_epoch_reaching([-5, -4], -1) is None


def test_recipe_command(tmp_path):
    ini = tmp_path / "r.ini"
    ini.write_text(TINY + "\n[recipe]\nkind = compare\nalgos = ctde-dqn, ctde-cql\nseeds = 0\n")
    assert cli.main(["--config", str(ini), "recipe", "--out", str(tmp_path / "out")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "summary.csv")))
    assert [r["algo"] for r in rows] == ["ctde-dqn", "ctde-cql"]
    assert (tmp_path / "out" / "ctde-cql" / "seed0" / "metrics.csv").exists()


def test_unknown_recipe(cfg, tmp_path):
    with pytest.raises(ValueError, match="recipe kind"):
        recipes.run(replace(cfg, recipe={"kind": "sweep"}), tmp_path)
