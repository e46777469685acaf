import math

import numpy as np
import pytest

from platoonreorg import config
from platoonreorg.distribution import (
    EpisodeStats,
    HeuristicDistributionPolicy,
    Observation,
    Observer,
    PlatoonConfigAction,
    compute_reward,
    enumerate_configurations,
    reward_bound,
)
from platoonreorg.world import VehicleState


def cav(i, x, y=4.0, speed=25.0):
    return VehicleState(id=i, kind="CAV", x=x, y=y, speed=speed, lane=1, target_lane=1)


def hdv(i, x, y=0.0, speed=20.0):
    return VehicleState(id=i, kind="HDV", x=x, y=y, speed=speed, lane=0, target_lane=0)


class TestActionSpace:
    def test_n3_listing(self):
        acts = enumerate_configurations(3)
        assert [str(a) for a in acts] == ["(0,1,2)", "(0)(1,2)", "(0,1)(2)", "(0)(1)(2)"]

    @pytest.mark.parametrize("n,count", [(2, 2), (3, 4), (4, 8), (5, 16)])
    def test_counts(self, n, count):
        assert len(enumerate_configurations(n)) == count

    def test_partition_property(self):
        for n in range(2, 6):
            for a in enumerate_configurations(n):
                flat = [i for grp in a.partition for i in grp]
                assert flat == list(range(n))

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            enumerate_configurations(1)
        with pytest.raises(ValueError):
            enumerate_configurations(6)

    def test_invalid_partition_rejected(self):
        with pytest.raises(ValueError):
            PlatoonConfigAction(partition=((0, 2), (1,)))


class TestObserver:
    def test_noiseless_ground_truth(self):
        obs = Observer(k=4, sigma_pos=0.0, sigma_vel=0.0)
        platoon = [cav(0, 100.0), cav(1, 90.0)]
        bg = [hdv(10, 130.0)]
        rng = np.random.default_rng(0)
        o = obs.observe(platoon, bg, rng, dt=1.0)
        assert o.rows[0][0] == pytest.approx(-10.0)
        assert o.rows[1][0] == pytest.approx(30.0)
        # sentinel padding for the remaining rows
        assert o.rows[2][8] == config.TTC_SENTINEL
        assert o.rows[3][8] == config.TTC_SENTINEL

    def test_empty_surroundings_sentinels(self):
        obs = Observer(k=3, sigma_pos=0.0, sigma_vel=0.0)
        platoon = [cav(0, 100.0)]
        o = obs.observe(platoon, [], np.random.default_rng(0), dt=1.0)
        assert all(r[8] == config.TTC_SENTINEL for r in o.rows)

    def test_seeded_noise_reproducible(self):
        platoon = [cav(0, 100.0), cav(1, 90.0)]
        bg = [hdv(10, 130.0)]
        a = Observer(k=4).observe(platoon, bg, np.random.default_rng(11), dt=1.0)
        b = Observer(k=4).observe(platoon, bg, np.random.default_rng(11), dt=1.0)
        assert np.allclose(a.flatten(), b.flatten())
        c = Observer(k=4).observe(platoon, bg, np.random.default_rng(12), dt=1.0)
        assert not np.allclose(a.flatten(), c.flatten())

    def test_accel_derived_after_noising(self):
        obs = Observer(k=2, sigma_pos=0.0, sigma_vel=0.0)
        platoon = [cav(0, 100.0, speed=25.0), cav(1, 90.0, speed=25.0)]
        rng = np.random.default_rng(0)
        o1 = obs.observe(platoon, [], rng, dt=1.0)
        assert o1.rows[0][4] == 0.0  # first sight: no difference yet
        platoon2 = [cav(0, 125.0, speed=25.0), cav(1, 114.0, speed=26.0)]
        o2 = obs.observe(platoon2, [], rng, dt=1.0)
        assert o2.rows[0][2] == pytest.approx(1.0)  # relative vx changed
        assert o2.rows[0][4] == pytest.approx(1.0)  # backward difference


def make_stats():
    return EpisodeStats(episode_len=120.0)


def single(n=3):
    return PlatoonConfigAction(partition=(tuple(range(n)),))


def split():
    return PlatoonConfigAction(partition=((0,), (1, 2)))


class TestReward:
    def test_full_speed_efficiency(self):
        platoon = [cav(0, 120.0, speed=30.0), cav(1, 110.0, speed=30.0),
                   cav(2, 100.0, speed=30.0)]
        stats = make_stats()
        stats.on_decision(single(), True, 0.0)
        total, bd = compute_reward(platoon, platoon, [], single(), stats,
                                   False, None, False, v_max=30.0)
        assert bd["R_e"] == pytest.approx(1.0)

    def test_perfect_formation_zero_tracking(self):
        platoon = [cav(0, 120.0), cav(1, 110.0), cav(2, 100.0)]
        stats = make_stats()
        stats.on_decision(single(), True, 0.0)
        _, bd = compute_reward(platoon, platoon, [], single(), stats,
                               False, None, False, v_max=30.0)
        assert bd["R_d"] == pytest.approx(0.0)

    def test_frequency_arithmetic(self):
        stats = make_stats()
        stats.n_trigger = 2
        stats.n_step = 100
        platoon = [cav(0, 120.0), cav(1, 110.0), cav(2, 100.0)]
        _, bd = compute_reward(platoon, platoon, [], single(), stats,
                               False, None, False, v_max=30.0)
        assert bd["r_rf"] == pytest.approx(0.02)

    def test_collision_zeroes_r_col(self):
        platoon = [cav(0, 120.0), cav(1, 110.0), cav(2, 100.0)]
        stats = make_stats()
        stats.on_decision(single(), True, 0.0)
        _, bd = compute_reward(platoon, platoon, [], single(), stats,
                               False, None, True, v_max=30.0)
        assert bd["r_col"] == 0.0

    def test_bounded(self):
        bound = reward_bound(3)
        rng = np.random.default_rng(5)
        stats = make_stats()
        for k in range(50):
            platoon = [cav(0, 120.0 + rng.uniform(-5, 5), speed=rng.uniform(0, 30)),
                       cav(1, 105.0 + rng.uniform(-5, 5), y=rng.uniform(0, 8),
                           speed=rng.uniform(0, 30)),
                       cav(2, 90.0 + rng.uniform(-5, 5), speed=rng.uniform(0, 30))]
            bg = [hdv(10, 120.0 + rng.uniform(-40, 40), y=rng.uniform(0, 8),
                      speed=rng.uniform(0, 35))]
            action = split() if k % 3 else single()
            triggered, completed = stats.on_decision(action, True, float(k))
            total, _ = compute_reward(platoon, platoon, bg, action, stats,
                                      triggered, completed, False, v_max=30.0)
            assert abs(total) <= bound


class TestEpisodeStats:
    def test_trigger_and_completion(self):
        stats = make_stats()
        t1, c1 = stats.on_decision(single(), True, 0.0)
        assert not t1 and c1 is None
        t2, c2 = stats.on_decision(split(), True, 5.0)
        assert t2 and stats.n_trigger == 1 and stats.reorganizing
        t3, c3 = stats.on_decision(split(), False, 10.0)
        assert not t3 and c3 is None
        t4, c4 = stats.on_decision(single(), True, 15.0)
        assert c4 == pytest.approx(10.0)
        assert not stats.reorganizing


class TestHeuristic:
    def test_clear_road_single(self):
        pol = HeuristicDistributionPolicy(n=3)
        a = pol.decide(0.0, math.inf, 0.0)
        assert a.single_group

    def test_low_ttc_splits(self):
        pol = HeuristicDistributionPolicy(n=3)
        a = pol.decide(0.0, 2.0, 0.0, at_risk_index=0)
        assert not a.single_group
        assert a.partition[0] == (0,)

    def test_isolates_middle_vehicle(self):
        pol = HeuristicDistributionPolicy(n=3)
        a = pol.decide(0.0, 2.0, 0.0, at_risk_index=1)
        assert a.partition == ((0,), (1,), (2,))

    def test_hysteresis_hold_time(self):
        pol = HeuristicDistributionPolicy(n=3, hold_time=5.0)
        assert not pol.decide(0.0, 2.0, 0.0).single_group
        # risk clears at t=1; merge only 5 s later
        assert not pol.decide(1.0, math.inf, 0.0).single_group
        assert not pol.decide(4.0, math.inf, 0.0).single_group
        assert not pol.decide(5.9, math.inf, 0.0).single_group
        assert pol.decide(6.1, math.inf, 0.0).single_group

    def test_high_risk_field_splits(self):
        pol = HeuristicDistributionPolicy(n=3)
        a = pol.decide(0.0, math.inf, 0.8, at_risk_index=2)
        assert not a.single_group
