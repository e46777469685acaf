"""Scenario construction for the two case studies, plus JSON (de)serialization.

Case 1 (lateral risk): three lanes with a merge ramp feeding the rightmost
lane; that lane runs congested so squeezed drivers keep escaping into the
platoon's middle lane for the whole run.

Case 2 (longitudinal risk): a scripted lead vehicle ahead of the platoon
brakes hard at a scheduled time and then crawls, forcing a reorganization.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import config
from .control import CavExecutor
from .episode import PlatoonMember, ScriptedBrake, World
from .traffic import HdvDriver, TrafficSpec, spawn_traffic, style_params
from .world import CAV, HDV, RampSegment, RoadMap, SimClock, VehicleState


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    case: int = 1
    lane_count: int = 3
    lane_width: float = config.LANE_WIDTH
    road_length: float = 4000.0
    speed_limit: float = config.SPEED_LIMIT
    ramp_start: float = 150.0
    ramp_end: float = 450.0
    platoon_size: int = 3
    headway: float = 10.0
    platoon_lane: int = 1
    platoon_head_x: float = 150.0
    platoon_speed: float = 25.0
    episode_len: float = 120.0
    success_window: float = 60.0
    # background traffic
    density: float = 6.0
    style_mix: dict = field(default_factory=lambda: {"timid": 0.2, "normal": 0.5,
                                                     "aggressive": 0.3})
    # case 1 congestion block
    congestion_density: float = 26.0
    congestion_speed: float = 16.0
    congestion_from: float = 220.0
    congestion_to: float = 2600.0
    ramp_queue: int = 4
    # case 2 event block
    event_time: float = 10.0
    event_decel: float = -6.0
    event_duration: float = 3.0
    event_cruise_after: float = 10.0
    event_lead_gap: float = 30.0

    def __post_init__(self):
        if self.case not in (1, 2):
            raise ScenarioError("case must be 1 or 2")
        if not (2 <= self.platoon_size <= 5):
            raise ScenarioError("platoon size must be within [2, 5]")
        if self.headway <= 0 or self.episode_len <= 0:
            raise ScenarioError("headway and episode length must be positive")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls(**json.loads(text))


def case1_spec(**overrides) -> ScenarioSpec:
    return ScenarioSpec(case=1, **overrides)


def case2_spec(**overrides) -> ScenarioSpec:
    merged = dict(density=7.0, congestion_density=0.0, ramp_queue=0)
    merged.update(overrides)
    return ScenarioSpec(case=2, **merged)


def _road(spec: ScenarioSpec) -> RoadMap:
    ramp = RampSegment(spec.ramp_start, spec.ramp_end) if spec.case == 1 else None
    return RoadMap(lane_count=spec.lane_count, lane_width=spec.lane_width,
                   length=spec.road_length, speed_limit=spec.speed_limit, ramp=ramp)


def _platoon(spec: ScenarioSpec, road: RoadMap):
    members = []
    y = road.lane_center(spec.platoon_lane)
    for i in range(spec.platoon_size):
        st = VehicleState(id=i, kind=CAV, x=spec.platoon_head_x - i * spec.headway,
                          y=y, speed=spec.platoon_speed, lane=spec.platoon_lane,
                          target_lane=spec.platoon_lane)
        ex = CavExecutor(cruise_speed=spec.platoon_speed)
        members.append(PlatoonMember(index=i, state=st, executor=ex))
    return members


def build_scenario(spec: ScenarioSpec, seed: int) -> World:
    """Deterministic initial world for (spec, seed)."""
    road = _road(spec)
    if not road.contains(spec.platoon_head_x):
        raise ScenarioError("platoon spawn outside the road")
    members = _platoon(spec, road)
    keep_clear = [(spec.platoon_head_x - spec.platoon_size * spec.headway - 40.0,
                   spec.platoon_head_x + 60.0, spec.platoon_lane, spec.platoon_lane)]

    hdvs = []
    next_id = 1000

    # ambient traffic over the run corridor
    ambient = TrafficSpec(density=spec.density, style_mix=dict(spec.style_mix),
                          seed=int(seed), speed_limit=spec.speed_limit,
                          x_min=spec.platoon_head_x - 300.0,
                          x_max=min(spec.platoon_head_x + 3200.0, road.length))
    res = spawn_traffic(ambient, road, keep_clear=keep_clear, id_start=next_id)
    hdvs.extend(res.drivers)
    next_id += max(res.requested, 1)

    rng = np.random.default_rng((int(seed), 101))

    scripted = None
    if spec.case == 1:
        hdvs.extend(_case1_congestion(spec, road, rng, next_id))
        next_id += 500
        hdvs.extend(_case1_ramp_queue(spec, road, rng, next_id))
        next_id += 100
        # keep the escape pressure out of the platoon's immediate spawn box
        hdvs = [d for d in hdvs if not _inside_keep_clear(d, keep_clear)]
    else:
        lead = _case2_scripted_leader(spec, road, next_id)
        hdvs.append(lead)
        scripted = ScriptedBrake(vehicle_id=lead.state.id, t_start=spec.event_time,
                                 decel=spec.event_decel, duration=spec.event_duration,
                                 cruise_after=spec.event_cruise_after)

    hdvs.sort(key=lambda d: d.state.id)
    clock = SimClock()
    return World(road=road, clock=clock, members=members, hdvs=hdvs,
                 cruise_speed=spec.platoon_speed, scripted=scripted)


def _inside_keep_clear(driver: HdvDriver, boxes) -> bool:
    s = driver.state
    for (x0, x1, l0, l1) in boxes:
        if l0 <= s.lane <= l1 and x0 <= s.x <= x1:
            return True
    return False


def _case1_congestion(spec: ScenarioSpec, road: RoadMap, rng, id_start: int):
    """Slow, dense rightmost lane whose drivers keep squeezing left."""
    drivers = []
    vid = id_start
    count = int(round(spec.congestion_density
                      * (spec.congestion_to - spec.congestion_from) / 1000.0))
    xs = np.sort(rng.uniform(spec.congestion_from, spec.congestion_to, size=count))
    last_x = -1e9
    for x in xs:
        if x - last_x < 14.0:
            continue
        last_x = float(x)
        style = "aggressive" if rng.uniform() < 0.55 else "normal"
        idm, mobil = style_params(style, spec.speed_limit)
        idm = dataclasses.replace(idm, desired_speed=float(
            rng.uniform(0.85, 1.1)) * spec.congestion_speed)
        st = VehicleState(id=vid, kind=HDV, x=float(x), y=road.lane_center(0),
                          speed=float(rng.uniform(0.8, 1.0)) * spec.congestion_speed,
                          lane=0, target_lane=0)
        drivers.append(HdvDriver(state=st, idm=idm, mobil=mobil, style=style,
                                 escape_bias=True))
        vid += 1
    return drivers


def _case1_ramp_queue(spec: ScenarioSpec, road: RoadMap, rng, id_start: int):
    """Vehicles on the ramp shoulder, committed to merging before it ends."""
    drivers = []
    y_ramp = -road.lane_width
    for k in range(spec.ramp_queue):
        x = spec.ramp_start + 30.0 + 28.0 * k
        if x >= spec.ramp_end - 20.0:
            break
        idm, mobil = style_params("normal", spec.speed_limit)
        idm = dataclasses.replace(idm, desired_speed=18.0)
        st = VehicleState(id=id_start + k, kind=HDV, x=x, y=y_ramp,
                          speed=14.0, lane=0, target_lane=0)
        drivers.append(HdvDriver(state=st, idm=idm, mobil=mobil, style="normal",
                                 escape_bias=True,
                                 merge_deadline_x=spec.ramp_end))
    return drivers


def _case2_scripted_leader(spec: ScenarioSpec, road: RoadMap, vid: int) -> HdvDriver:
    idm, mobil = style_params("normal", spec.speed_limit)
    x = spec.platoon_head_x + spec.event_lead_gap + config.VEHICLE_LENGTH
    st = VehicleState(id=vid, kind=HDV, x=x, y=road.lane_center(spec.platoon_lane),
                      speed=spec.platoon_speed, lane=spec.platoon_lane,
                      target_lane=spec.platoon_lane)
    return HdvDriver(state=st, idm=idm, mobil=mobil, style="normal")
