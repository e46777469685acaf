"""Human-driven background traffic: IDM car following, MOBIL lane changes,
style presets, and seeded traffic-flow generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import config
from .world import HDV, RoadMap, VehicleState, lane_gap, lead_vehicle, rear_vehicle

B_EMERGENCY = 9.0  # hardest braking any driver can produce [m/s^2]


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 30.0   # v0 [m/s]
    time_headway: float = 1.5     # T [s]
    min_gap: float = 2.0          # s0 [m]
    max_accel: float = 1.5        # a [m/s^2]
    comfort_decel: float = 2.0    # b [m/s^2]
    exponent: float = 4.0         # delta

    def __post_init__(self):
        vals = (self.desired_speed, self.time_headway, self.min_gap,
                self.max_accel, self.comfort_decel)
        if any(v <= 0 for v in vals) or self.exponent < 1:
            raise ValueError("IDM parameters must be positive with exponent >= 1")


@dataclass(frozen=True)
class MobilParams:
    politeness: float = 0.35
    accel_threshold: float = 0.2   # [m/s^2]
    safe_decel_limit: float = 3.0  # max braking imposed on the new follower [m/s^2]

    def __post_init__(self):
        if not (0.0 <= self.politeness <= 1.0):
            raise ValueError("politeness must be within [0, 1]")
        if self.accel_threshold <= 0 or self.safe_decel_limit <= 0:
            raise ValueError("MOBIL thresholds must be positive")


def desired_gap(v: float, dv: float, p: IdmParams) -> float:
    """IDM dynamic desired gap s*(v, dv); the dynamic part never goes negative."""
    dyn = v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfort_decel))
    return p.min_gap + max(0.0, dyn)


def idm_acceleration(v: float, s: float, dv: float, p: IdmParams) -> float:
    """IDM acceleration for speed v, bumper gap s, closing speed dv (= v - v_lead).

    Nonpositive gaps mean the follower is already inside its leader; the
    output is emergency braking (see idm_acceleration_checked for the flag).
    """
    if s <= 0.0:
        return -B_EMERGENCY
    a = p.max_accel * (1.0 - (v / p.desired_speed) ** p.exponent
                       - (desired_gap(v, dv, p) / s) ** 2)
    return min(max(a, -B_EMERGENCY), p.max_accel)


def idm_acceleration_checked(v: float, s: float, dv: float, p: IdmParams):
    """(acceleration, gap_was_valid) variant for callers that track the error."""
    return idm_acceleration(v, s, dv, p), s > 0.0


def free_accel(v: float, p: IdmParams) -> float:
    return idm_acceleration(v, 1e9, 0.0, p)


@dataclass(frozen=True)
class Neighbor:
    """A follower or leader as seen from a candidate ego slot."""

    gap: float                  # bumper gap toward ego [m], may be +inf
    speed: float
    params: IdmParams = field(default_factory=IdmParams)


@dataclass(frozen=True)
class LaneContext:
    """What ego would face in a lane: its leader and its (new) follower."""

    leader: Neighbor | None = None
    follower: Neighbor | None = None
    follower_leader_gap: float = math.inf   # follower's gap to its current leader
    follower_leader_speed: float = math.inf


def _accel_toward(v: float, leader: Neighbor | None, p: IdmParams) -> float:
    if leader is None or not math.isfinite(leader.gap):
        return free_accel(v, p)
    return idm_acceleration(v, leader.gap, v - leader.speed, p)


def mobil_decide(ego_speed: float, ego_params: IdmParams,
                 current: LaneContext, target: LaneContext,
                 p: MobilParams) -> bool:
    """MOBIL acceptance: safety veto on the new follower, then incentive.

    Missing neighbors count as infinitely distant.  Both criteria are
    evaluated with the IDM acceleration of the affected vehicles.
    """
    # safety: braking the new follower would need behind ego
    if target.follower is not None and math.isfinite(target.follower.gap):
        a_follower_new = idm_acceleration(
            target.follower.speed, target.follower.gap,
            target.follower.speed - ego_speed, target.follower.params)
        if a_follower_new < -p.safe_decel_limit:
            return False

    a_self_old = _accel_toward(ego_speed, current.leader, ego_params)
    a_self_new = _accel_toward(ego_speed, target.leader, ego_params)
    own_gain = a_self_new - a_self_old

    others_gain = 0.0
    if target.follower is not None and math.isfinite(target.follower.gap):
        f = target.follower
        a_before = idm_acceleration(f.speed, target.follower_leader_gap,
                                    f.speed - target.follower_leader_speed, f.params) \
            if math.isfinite(target.follower_leader_gap) else free_accel(f.speed, f.params)
        a_after = idm_acceleration(f.speed, f.gap, f.speed - ego_speed, f.params)
        others_gain += a_after - a_before
    if current.follower is not None and math.isfinite(current.follower.gap):
        f = current.follower
        a_before = idm_acceleration(f.speed, f.gap, f.speed - ego_speed, f.params)
        gap_after = f.gap + (current.leader.gap if current.leader is not None
                             and math.isfinite(current.leader.gap) else math.inf)
        a_after = idm_acceleration(f.speed, gap_after, f.speed - current.leader.speed, f.params) \
            if current.leader is not None and math.isfinite(current.leader.gap) \
            else free_accel(f.speed, f.params)
        others_gain += a_after - a_before

    return own_gain + p.politeness * others_gain > p.accel_threshold


# --- driving styles ----------------------------------------------------------

STYLES = ("timid", "normal", "aggressive")


def style_params(style: str, speed_limit: float):
    """(IdmParams, MobilParams) presets for one driving style."""
    if style == "timid":
        idm = IdmParams(desired_speed=0.9 * speed_limit, time_headway=2.0)
        mobil = MobilParams(politeness=0.5, accel_threshold=0.2, safe_decel_limit=2.0)
    elif style == "normal":
        idm = IdmParams(desired_speed=1.0 * speed_limit, time_headway=1.5)
        mobil = MobilParams(politeness=0.35, accel_threshold=0.2, safe_decel_limit=3.0)
    elif style == "aggressive":
        idm = IdmParams(desired_speed=1.15 * speed_limit, time_headway=1.0)
        mobil = MobilParams(politeness=0.1, accel_threshold=0.1, safe_decel_limit=4.0)
    else:
        raise ValueError(f"unknown driving style {style!r}")
    return idm, mobil


@dataclass(frozen=True)
class TrafficSpec:
    density: float = 8.0                       # vehicles/km/lane
    style_mix: dict = field(default_factory=lambda: {"timid": 0.2, "normal": 0.5, "aggressive": 0.3})
    seed: int = 0
    speed_limit: float = config.SPEED_LIMIT
    x_min: float = 0.0                         # spawn corridor along the road
    x_max: float | None = None

    def __post_init__(self):
        if self.density < 0:
            raise ValueError("density must be nonnegative")
        total = sum(self.style_mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError("style mix probabilities must sum to 1")


@dataclass
class HdvDriver:
    """Background-vehicle agent: IDM longitudinally, MOBIL laterally."""

    state: VehicleState
    idm: IdmParams
    mobil: MobilParams
    style: str = "normal"
    lc_from_y: float = 0.0
    lc_to_y: float = 0.0
    lc_progress: float = -1.0       # <0: not changing
    lc_duration: float = 2.5
    merge_deadline_x: float | None = None   # ramp vehicles must be merged by here
    escape_bias: bool = False               # congested-lane escapers accept tighter gaps
    scripted_accel: float | None = None     # event override; wins over IDM when set

    def changing(self) -> bool:
        return self.lc_progress >= 0.0

    def begin_lane_change(self, target_lane: int, road: RoadMap):
        self.lc_from_y = self.state.y
        self.lc_to_y = road.lane_center(target_lane)
        self.lc_progress = 0.0
        self.state.target_lane = target_lane

    def lateral_update(self, dt: float, road: RoadMap):
        if not self.changing():
            return
        self.lc_progress += dt / self.lc_duration
        if self.lc_progress >= 1.0:
            self.lc_progress = -1.0
            self.state.y = self.lc_to_y
            self.state.lane = road.lane_of(self.state.y)
        else:
            frac = self.lc_progress
            self.state.y = self.lc_from_y + (self.lc_to_y - self.lc_from_y) * frac
            if frac >= 0.5:
                self.state.lane = road.lane_of(self.lc_to_y)


@dataclass
class SpawnResult:
    drivers: list
    requested: int
    placed: int

    @property
    def shortfall(self) -> int:
        return self.requested - self.placed


def _blocked(x: float, lane: int, keep_clear) -> bool:
    for (x0, x1, lane0, lane1) in keep_clear:
        if lane0 <= lane <= lane1 and x0 <= x <= x1:
            return True
    return False


def spawn_traffic(spec: TrafficSpec, road: RoadMap, keep_clear=(),
                  id_start: int = 1000) -> SpawnResult:
    """Seeded random placement at the requested density.

    keep_clear entries are (x_min, x_max, lane_min, lane_max) exclusion boxes
    covering e.g. the platoon's spawn corridor.  Vehicles are placed lane by
    lane with at least the style's equilibrium headway between neighbors;
    when the corridor cannot hold the requested count the remainder is
    dropped and reported as shortfall.
    """
    rng = np.random.default_rng(spec.seed)
    x_max = spec.x_max if spec.x_max is not None else road.length
    corridor_km = (x_max - spec.x_min) / 1000.0
    requested = int(round(spec.density * road.lane_count * corridor_km))

    styles = sorted(spec.style_mix)
    probs = np.array([spec.style_mix[s] for s in styles])
    drivers = []
    vid = id_start
    per_lane = [[] for _ in range(road.lane_count)]
    for k in range(requested):
        lane = int(rng.integers(0, road.lane_count))
        style = styles[int(rng.choice(len(styles), p=probs))]
        idm, mobil = style_params(style, spec.speed_limit)
        speed = float(rng.uniform(0.75, 0.95)) * idm.desired_speed
        min_headway = idm.min_gap + speed * idm.time_headway
        placed = False
        for _attempt in range(25):
            x = float(rng.uniform(spec.x_min, x_max))
            if _blocked(x, lane, keep_clear):
                continue
            if any(abs(x - ox) < min_headway + config.VEHICLE_LENGTH for ox in per_lane[lane]):
                continue
            per_lane[lane].append(x)
            st = VehicleState(id=vid, kind=HDV, x=x, y=road.lane_center(lane),
                              speed=speed, lane=lane, target_lane=lane)
            drivers.append(HdvDriver(state=st, idm=idm, mobil=mobil, style=style))
            vid += 1
            placed = True
            break
        if not placed:
            continue
    drivers.sort(key=lambda d: d.state.id)
    return SpawnResult(drivers=drivers, requested=requested, placed=len(drivers))
