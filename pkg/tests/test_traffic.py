import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platoonreorg.traffic import (
    B_EMERGENCY,
    IdmParams,
    LaneContext,
    MobilParams,
    Neighbor,
    TrafficSpec,
    desired_gap,
    idm_acceleration,
    idm_acceleration_checked,
    mobil_decide,
    spawn_traffic,
    style_params,
)
from platoonreorg.world import RoadMap

IDM = IdmParams(desired_speed=30.0, time_headway=1.5, min_gap=2.0,
                max_accel=1.5, comfort_decel=2.0, exponent=4.0)


def idm_equilibrium_gap(v, p, lo=1.0, hi=500.0):
    """Bisection on the IDM expression for the zero-acceleration gap."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if idm_acceleration(v, mid, 0.0, p) < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestIdm:
    def test_free_road_equilibrium(self):
        a = idm_acceleration(30.0, 1e5, 0.0, IDM)
        assert a <= 0.0
        assert abs(a) < 1e-3

    def test_standing_start(self):
        a = idm_acceleration(0.0, 1e5, 0.0, IDM)
        assert a == pytest.approx(IDM.max_accel, abs=1e-6)

    def test_equilibrium_gap_bisection(self):
        gap = idm_equilibrium_gap(20.0, IDM)
        # closed form: (s0 + v T) / sqrt(1 - (v/v0)^4)
        closed = (2.0 + 20.0 * 1.5) / math.sqrt(1.0 - (20.0 / 30.0) ** 4)
        assert gap == pytest.approx(closed, abs=1e-6)
        assert idm_acceleration(20.0, gap, 0.0, IDM) == pytest.approx(0.0, abs=1e-6)

    def test_zero_gap_is_emergency(self):
        a, ok = idm_acceleration_checked(20.0, 0.0, 0.0, IDM)
        assert a == -B_EMERGENCY
        assert not ok

    @given(v=st.floats(0.0, 40.0), s=st.floats(0.5, 500.0), dv=st.floats(-15.0, 15.0))
    @settings(max_examples=300, deadline=None)
    def test_output_range(self, v, s, dv):
        a = idm_acceleration(v, s, dv, IDM)
        assert -B_EMERGENCY <= a <= IDM.max_accel

    @given(v=st.floats(0.0, 40.0), s=st.floats(1.0, 300.0), dv=st.floats(-10.0, 10.0))
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_gap(self, v, s, dv):
        assert idm_acceleration(v, s + 5.0, dv, IDM) >= idm_acceleration(v, s, dv, IDM) - 1e-12

    @given(v=st.floats(0.5, 38.0), s=st.floats(5.0, 300.0), dv=st.floats(-10.0, 10.0))
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_speed(self, v, s, dv):
        assert idm_acceleration(v + 1.0, s, dv, IDM) <= idm_acceleration(v, s, dv, IDM) + 1e-12


class TestMobil:
    def setup_method(self):
        self.mobil = MobilParams(politeness=0.35, accel_threshold=0.2, safe_decel_limit=3.0)

    def test_identical_lanes_keep(self):
        ctx = LaneContext(leader=Neighbor(gap=40.0, speed=25.0, params=IDM))
        assert not mobil_decide(25.0, IDM, ctx, ctx, self.mobil)

    def test_blocked_lane_escapes_to_empty(self):
        v = 20.0
        tight = idm_equilibrium_gap(v, IDM) * 0.45
        assert idm_acceleration(v, tight, 0.0, IDM) < -self.mobil.accel_threshold
        current = LaneContext(leader=Neighbor(gap=tight, speed=v, params=IDM))
        target = LaneContext()
        assert mobil_decide(v, IDM, current, target, self.mobil)

    def test_safety_veto_absolute(self):
        v = 25.0
        current = LaneContext(leader=Neighbor(gap=8.0, speed=10.0, params=IDM))
        # new follower arriving fast and close: required braking beyond limit
        target = LaneContext(follower=Neighbor(gap=2.0, speed=35.0, params=IDM))
        a_needed = idm_acceleration(35.0, 2.0, 10.0, IDM)
        assert a_needed < -self.mobil.safe_decel_limit
        assert not mobil_decide(v, IDM, current, target, self.mobil)


class TestStyles:
    def test_presets(self):
        limit = 30.0
        idm_t, _ = style_params("timid", limit)
        idm_n, _ = style_params("normal", limit)
        idm_a, mobil_a = style_params("aggressive", limit)
        assert idm_t.desired_speed == pytest.approx(27.0)
        assert idm_n.desired_speed == pytest.approx(30.0)
        assert idm_a.desired_speed == pytest.approx(34.5)
        assert idm_t.time_headway > idm_n.time_headway > idm_a.time_headway
        _, mobil_n = style_params("normal", limit)
        assert mobil_a.accel_threshold == pytest.approx(mobil_n.accel_threshold / 2)

    def test_unknown_style(self):
        with pytest.raises(ValueError):
            style_params("reckless", 30.0)


class TestSpawn:
    def setup_method(self):
        self.road = RoadMap(lane_count=3, length=1000.0)

    def test_zero_density(self):
        res = spawn_traffic(TrafficSpec(density=0.0, seed=1), self.road)
        assert res.drivers == []
        assert res.requested == 0

    def test_count_rule(self):
        res = spawn_traffic(TrafficSpec(density=10.0, seed=3), self.road)
        assert res.requested == 30
        assert res.placed + res.shortfall == 30

    def test_determinism(self):
        spec = TrafficSpec(density=12.0, seed=42)
        a = spawn_traffic(spec, self.road)
        b = spawn_traffic(spec, self.road)
        assert len(a.drivers) == len(b.drivers)
        for da, db in zip(a.drivers, b.drivers):
            assert (da.state.x, da.state.y, da.state.speed) == (db.state.x, db.state.y, db.state.speed)
            assert da.style == db.style

    def test_keep_clear_respected(self):
        spec = TrafficSpec(density=25.0, seed=5)
        box = (400.0, 600.0, 1, 1)
        res = spawn_traffic(spec, self.road, keep_clear=[box])
        for d in res.drivers:
            if d.state.lane == 1:
                assert not (400.0 <= d.state.x <= 600.0)

    def test_min_spacing_by_style(self):
        spec = TrafficSpec(density=20.0, seed=9)
        res = spawn_traffic(spec, self.road)
        per_lane = {}
        for d in res.drivers:
            per_lane.setdefault(d.state.lane, []).append(d)
        for drivers in per_lane.values():
            drivers.sort(key=lambda d: d.state.x)
            for a, b in zip(drivers, drivers[1:]):
                assert b.state.x - a.state.x > 2.0  # never overlapping
