import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcql import env
from mcql.env import HOVER, EnvConfig, TaskSpec, decode_action, encode_action

EAST, WEST = 0, 1


def hover(device, D):
    return encode_action(HOVER, device, D)


class TestTransmitPower:
    def test_same_cell(self, table1):
        # 31 * 1e-13 / 1000 * (100^2 + 0)
        assert env.transmit_power(table1, (3, 3), (3, 3)) == pytest.approx(3.1e-11, rel=1e-9)

    def test_one_cell_east(self, table1):
        # 3.1e-15 * (100^2 + 100^2)
        assert env.transmit_power(table1, (4, 3), (3, 3)) == pytest.approx(6.2e-11, rel=1e-9)

    def test_zero_packet_costs_nothing(self):
        cfg = EnvConfig(M=0.0)
        assert env.transmit_power(cfg, (0, 0), (10, 10)) == 0.0

    def test_channel_gain_consistent_with_power(self, table1):
        g = env.channel_gain(table1, (0, 0), (1, 2))
        p = env.transmit_power(table1, (0, 0), (1, 2))
        assert p == pytest.approx((2**5 - 1) * 1e-13 / g, rel=1e-12)

    def test_strictly_increasing_in_distance(self, table1):
        powers = [env.transmit_power(table1, (0, 0), (k, 0)) for k in range(11)]
        assert all(a < b for a, b in zip(powers, powers[1:]))


@pytest.mark.parametrize("aoi,served,expected", [(5, True, 1), (5, False, 6), (1, False, 2)])
def test_aoi_update(aoi, served, expected):
    assert env.aoi_update(aoi, served) == expected


class TestReset:
    def test_deterministic(self, desk, task):
        assert env.reset(desk, task) == env.reset(desk, task)
        assert env.device_cells(desk, task) == env.device_cells(desk, TaskSpec(5.0, 0))

    def test_exhaustion(self):
        cfg = EnvConfig(L=3, D=9, U=1)
        assert sorted(env.device_cells(cfg, TaskSpec())) == sorted((x, y) for x in range(3) for y in range(3))

    def test_corner_start(self):
        state = env.reset(EnvConfig(), TaskSpec())
        assert state.uav_pos == ((0, 0), (10, 10))
        assert state.aoi == (1,) * 10 and state.t == 0

    def test_too_many_devices(self):
        with pytest.raises(env.ConfigError):
            EnvConfig(L=2, D=5)

    def test_layout_seed_changes_layout(self, desk):
        assert env.device_cells(desk, TaskSpec(0, 0)) != env.device_cells(desk, TaskSpec(0, 1))


class TestStep:
    def test_pure_aoi_reward(self):
        cfg = EnvConfig(L=3, D=1, U=1, T=5, delta=(1.0,))
        task = TaskSpec(0.0, 0)
        # a moving UAV serves nobody
        state = env.reset(cfg, task)
        state, out = env.step(state, [encode_action(EAST, 0, 1)], cfg, task)
        assert not out.served[0]
        assert state.aoi == (2,)
        assert out.reward == -2.0

    def test_hover_over_device_serves_it(self, table1):
        task = TaskSpec(0.0, 0)
        dev = env.device_cells(table1, task)[3]
        state = env.EnvState(uav_pos=(dev, (0, 0)), aoi=(7,) * 10, t=0)
        state, out = env.step(state, [hover(3, 10), encode_action(EAST, 0, 10)], table1, task)
        assert out.served[3] and sum(out.served) == 1
        assert state.aoi[3] == 1
        assert out.power == pytest.approx(3.1e-11, rel=1e-9)

    def test_boundary_clamp(self, desk, task):
        state = env.reset(desk, task)
        state, _ = env.step(state, [encode_action(WEST, 0, desk.D), hover(0, desk.D)], desk, task)
        assert state.uav_pos[0] == (0, 0)

    def test_moving_uav_does_not_serve(self, desk, task):
        state = env.reset(desk, task)
        state, out = env.step(state, [encode_action(EAST, 1, desk.D), encode_action(WEST, 1, desk.D)], desk, task)
        assert not any(out.served) and out.power == 0.0

    def test_collision_goes_to_nearest(self, table1):
        task = TaskSpec(1.0, 0)
        dev = env.device_cells(table1, task)[0]
        near = (dev[0], dev[1])
        far = (dev[0] + (1 if dev[0] < 5 else -1) * 3, dev[1])
        state = env.EnvState(uav_pos=(far, near), aoi=(1,) * 10, t=0)
        _, out = env.step(state, [hover(0, 10), hover(0, 10)], table1, task)
        assert out.power == pytest.approx(env.transmit_power(table1, dev, near))

    def test_collision_tie_single_packet(self, table1):
        task = TaskSpec(1.0, 0)
        dev = env.device_cells(table1, task)[0]
        state = env.EnvState(uav_pos=(dev, dev), aoi=(1,) * 10, t=0)
        _, out = env.step(state, [hover(0, 10), hover(0, 10)], table1, task)
        assert out.power == pytest.approx(3.1e-11, rel=1e-9)

    def test_reward_includes_lambda_power(self, table1):
        task = TaskSpec(1e10, 0)
        dev = env.device_cells(table1, task)[2]
        state = env.EnvState(uav_pos=(dev, (0, 0)), aoi=(1,) * 10, t=0)
        _, out = env.step(state, [hover(2, 10), encode_action(EAST, 0, 10)], table1, task)
        assert out.reward == -out.weighted_aoi - 1e10 * out.power

    def test_done_and_stepping_past_end(self):
        cfg = EnvConfig(L=2, D=1, U=1, T=2)
        task = TaskSpec()
        s = env.reset(cfg, task)
        s, o1 = env.step(s, [0], cfg, task)
        s, o2 = env.step(s, [0], cfg, task)
        assert not o1.done and o2.done
        with pytest.raises(env.EpisodeDoneError):
            env.step(s, [0], cfg, task)


class TestObserve:
    def test_initial(self):
        cfg = EnvConfig()
        obs = env.observe(env.reset(cfg, TaskSpec()), 0, cfg)
        np.testing.assert_array_equal(obs, [0.0, 0.0] + [0.01] * 10)

    def test_far_corner(self):
        cfg = EnvConfig()
        obs = env.observe(env.reset(cfg, TaskSpec()), 1, cfg)
        assert obs[0] == 1.0 and obs[1] == 1.0

    def test_aoi_clipped(self):
        cfg = EnvConfig()
        state = env.EnvState(((0, 0), (1, 1)), (250,) + (1,) * 9, 0)
        assert env.observe(state, 0, cfg)[2] == 1.0

    def test_global_state_length(self, desk, task):
        assert env.global_state(env.reset(desk, task), desk).shape == (2 * desk.U + desk.D,)


@given(st.integers(1, 12), st.data())
def test_action_encoding_bijection(D, data):
    a = data.draw(st.integers(0, 5 * D - 1))
    assert encode_action(*decode_action(a, D), D) == a


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 19), st.integers(0, 19)), min_size=1, max_size=50), st.floats(0, 1e11))
def test_aoi_trajectory_and_reward_decomposition(actions, lam):
    cfg = env.desk_config()
    task = TaskSpec(lam, 3)
    state = env.reset(cfg, task)
    last_service = [None] * cfg.D
    for pair in actions:
        t_before = state.t
        state, out = env.step(state, list(pair), cfg, task)
        for d, s in enumerate(out.served):
            if s:
                last_service[d] = t_before
        for d in range(cfg.D):
            expected = state.t - last_service[d] if last_service[d] is not None else 1 + state.t
            assert state.aoi[d] == expected
        assert out.reward == -float(np.dot(cfg.delta, state.aoi)) - lam * out.power


def test_determinism_bit_identical(desk):
    task = TaskSpec(3e10, 1)
    rng = np.random.default_rng(0)
    acts = rng.integers(desk.n_actions, size=(desk.T, desk.U))

    def run():
        s = env.reset(desk, task)
        outs = []
        for a in acts:
            s, o = env.step(s, list(a), desk, task)
            outs.append((o.reward, o.power, o.served, o.observations.tobytes()))
        return outs

    assert run() == run()


def test_wrapper_matches_functional(desk, task):
    e = env.UAVDataCollectionEnv(desk, task)
    obs = e.reset()
    np.testing.assert_array_equal(obs, env.observe_all(env.reset(desk, task), desk))
    out = e.step([hover(0, desk.D)] * desk.U)
    assert e.state.t == 1 and np.isfinite(out.reward)
