import json

import numpy as np
import pytest

from mcql import data, env, trainers
from mcql.env import TaskSpec


@pytest.fixture(scope="module")
def small_bundle():
    """1000 online steps on the desk grid, last 10% kept (100 entries per agent)."""
    cfg = env.desk_config()
    behavior = trainers.BehaviorConfig(learning_starts=200, batch_size=32)
    return data.generate_offline_dataset(cfg, TaskSpec(2e10, 0), 1000, seed=7, behavior=behavior)


def test_retains_last_ten_percent(small_bundle):
    assert small_bundle.size == 100
    assert small_bundle.n_agents == 2


def test_generation_deterministic(small_bundle):
    cfg = env.desk_config()
    behavior = trainers.BehaviorConfig(learning_starts=200, batch_size=32)
    again = data.generate_offline_dataset(cfg, TaskSpec(2e10, 0), 1000, seed=7, behavior=behavior)
    assert again.equals(small_bundle)


def test_chronological_suffix_of_trace():
    cfg = env.desk_config()
    behavior = trainers.BehaviorConfig(learning_starts=200, batch_size=32)
    _, trace = trainers.train_online_behavior(cfg, TaskSpec(2e10, 0), 1000, 7, behavior)
    bundle = data.generate_offline_dataset(cfg, TaskSpec(2e10, 0), 1000, seed=7, behavior=behavior)
    np.testing.assert_array_equal(bundle.obs, trace["obs"][:, 900:])
    np.testing.assert_array_equal(bundle.actions, trace["actions"][:, 900:])
    np.testing.assert_array_equal(bundle.t, trace["t"][900:])


def test_aligned_rewards(small_bundle):
    assert (small_bundle.rewards[0] == small_bundle.rewards[1]).all()


def test_replay_reproduces_rewards_and_next_obs(small_bundle):
    assert data.replay_mismatches(small_bundle) == []


def test_replay_detects_tampering(small_bundle):
    tampered = small_bundle.subset(np.arange(small_bundle.size))
    tampered.rewards[:, 5] += 1.0
    assert data.replay_mismatches(tampered) == [5]


def test_capacity_enforced(small_bundle):
    with pytest.raises(data.DatasetError, match="capacity"):
        data.DatasetBundle(small_bundle.cfg, small_bundle.task, small_bundle.obs, small_bundle.actions,
                           small_bundle.rewards, small_bundle.next_obs, small_bundle.done, small_bundle.t,
                           small_bundle.episode, capacity=50)


def test_unaligned_rewards_rejected(small_bundle):
    rewards = small_bundle.rewards.copy()
    rewards[1, 0] += 1
    with pytest.raises(data.DatasetError, match="cooperative"):
        data.DatasetBundle(small_bundle.cfg, small_bundle.task, small_bundle.obs, small_bundle.actions, rewards,
                           small_bundle.next_obs, small_bundle.done, small_bundle.t, small_bundle.episode)


class TestSplit:
    def test_half_split(self, small_bundle):
        s = data.split_support_query(small_bundle, 0.5, seed=0)
        assert len(s.support) == len(s.query) == 50
        assert not set(s.support) & set(s.query)
        assert sorted(set(s.support) | set(s.query)) == list(range(100))

    def test_reproducible(self, small_bundle):
        a, b = data.split_support_query(small_bundle, 0.3, 4), data.split_support_query(small_bundle, 0.3, 4)
        np.testing.assert_array_equal(a.support, b.support)
        assert a.ratio == 0.3

    def test_bad_ratio_and_tiny_dataset(self, small_bundle):
        with pytest.raises(ValueError):
            data.split_support_query(small_bundle, 1.0)
        with pytest.raises(data.DatasetError):
            data.split_support_query(small_bundle.subset([0]), 0.5)

    def test_5000_entries(self):
        cfg = env.desk_config()
        n = 5000
        big = data.DatasetBundle(cfg, TaskSpec(), np.zeros((2, n, 6)), np.zeros((2, n), int), np.zeros((2, n)),
                                 np.zeros((2, n, 6)), np.zeros((2, n), bool), np.zeros(n, int), np.zeros(n, int))
        s = data.split_support_query(big, 0.5, 1)
        assert (len(s.support), len(s.query)) == (2500, 2500)


class TestSampling:
    def test_full_batch_is_permutation(self, small_bundle):
        rng = np.random.default_rng(0)
        batch = data.sample_minibatch(small_bundle, small_bundle.size, rng)
        assert sorted(batch.rewards) == sorted(small_bundle.rewards[0])
        assert len(batch) == small_bundle.size

    def test_reproducible(self, small_bundle):
        a = data.sample_minibatch(small_bundle, 16, np.random.default_rng(3))
        b = data.sample_minibatch(small_bundle, 16, np.random.default_rng(3))
        np.testing.assert_array_equal(a.obs, b.obs)

    def test_aligned_across_agents(self, small_bundle):
        batch = data.sample_minibatch(small_bundle, 32, np.random.default_rng(1))
        key = {(tuple(small_bundle.obs[0, i]), tuple(small_bundle.obs[1, i])): small_bundle.rewards[0, i]
               for i in range(small_bundle.size)}
        for i in range(32):
            assert key[(tuple(batch.obs[0, i]), tuple(batch.obs[1, i]))] == batch.rewards[i]

    def test_oversized(self, small_bundle):
        with pytest.raises(ValueError):
            data.sample_minibatch(small_bundle, 101, np.random.default_rng(0))

    def test_epoch_pass_covers_everything(self, small_bundle):
        batches = list(data.iter_minibatches(small_bundle, 32, np.random.default_rng(0)))
        assert [len(b) for b in batches] == [32, 32, 32, 4]


class TestPersistence:
    def test_roundtrip_bit_exact(self, small_bundle, tmp_path):
        data.save(small_bundle, tmp_path / "ds")
        loaded = data.load(tmp_path / "ds")
        assert loaded.equals(small_bundle)
        assert loaded.obs.tobytes() == small_bundle.obs.tobytes()

    def test_header_line_versioned(self, small_bundle, tmp_path):
        data.save(small_bundle, tmp_path / "ds")
        header = json.loads((tmp_path / "ds" / "transitions.jsonl").read_text().splitlines()[0])
        assert header == {"format": data.FORMAT_NAME, "version": data.FORMAT_VERSION}

    def test_truncated_file_reports_line(self, small_bundle, tmp_path):
        data.save(small_bundle, tmp_path / "ds")
        path = tmp_path / "ds" / "transitions.jsonl"
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(data.DatasetError, match=r"transitions.jsonl:\d+"):
            data.load(tmp_path / "ds")

    def test_missing_records(self, small_bundle, tmp_path):
        data.save(small_bundle, tmp_path / "ds")
        path = tmp_path / "ds" / "transitions.jsonl"
        lines = path.read_text().splitlines(keepends=True)
        path.write_text("".join(lines[:-3]))
        with pytest.raises(data.DatasetError, match="expected 100 records"):
            data.load(tmp_path / "ds")

    def test_version_mismatch(self, small_bundle, tmp_path):
        data.save(small_bundle, tmp_path / "ds")
        meta = json.loads((tmp_path / "ds" / "metadata.json").read_text())
        meta["version"] = 99
        (tmp_path / "ds" / "metadata.json").write_text(json.dumps(meta))
        with pytest.raises(data.DatasetError, match="version 99"):
            data.load(tmp_path / "ds")

    def test_lambda_mismatch_refused(self, small_bundle, tmp_path):
        data.save(small_bundle, tmp_path / "ds")
        with pytest.raises(data.DatasetError, match="lambda"):
            data.load(tmp_path / "ds", task=TaskSpec(1.0, 0))
        assert data.load(tmp_path / "ds", task=TaskSpec(2e10, 0)).size == 100

    def test_missing_directory(self, tmp_path):
        with pytest.raises(data.DatasetError, match="missing"):
            data.load(tmp_path / "nothing")


def test_transition_view(small_bundle):
    tr = next(small_bundle.transitions(1))
    assert tr.agent == 1 and 0 <= tr.action < 20 and len(tr.obs) == 6
