"""Road geometry, vehicle state, kinematics, and collision/TTC primitives.

Axis convention: x runs along the road, y runs to the left of travel, lane
centers sit at ``lane * lane_width``.  Lane 0 is the rightmost lane (the ramp
merges into it).  Headings are measured from +x toward +y, so a left lane
change uses a positive heading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from . import config


class WorldError(ValueError):
    """Invalid state or argument fed to a world-core primitive."""


@dataclass(frozen=True)
class RampSegment:
    start: float
    end: float

    def __post_init__(self):
        if not (self.end > self.start >= 0.0):
            raise WorldError(f"ramp segment [{self.start}, {self.end}] is empty or negative")


@dataclass(frozen=True)
class RoadMap:
    lane_count: int = 3
    lane_width: float = config.LANE_WIDTH
    length: float = 4000.0
    speed_limit: float = config.SPEED_LIMIT
    ramp: RampSegment | None = None

    def __post_init__(self):
        if self.lane_count < 2:
            raise WorldError("need at least 2 lanes")
        if self.lane_width <= 0 or self.length <= 0:
            raise WorldError("lane width and length must be positive")
        if self.ramp is not None and self.ramp.end > self.length:
            raise WorldError("ramp segment extends past the road end")

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width

    def lane_of(self, y: float) -> int:
        lane = int(round(y / self.lane_width))
        return min(max(lane, 0), self.lane_count - 1)

    def contains(self, x: float) -> bool:
        return 0.0 <= x <= self.length


CAV = "CAV"
HDV = "HDV"


@dataclass
class VehicleState:
    """Pose and derived kinematics of one vehicle.

    ``accel``/``jerk`` are longitudinal backward differences of ``speed``;
    the per-axis values (ax..jy) are backward differences of (vx, vy).
    """

    id: int
    kind: str = HDV
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    accel: float = 0.0
    jerk: float = 0.0
    length: float = config.VEHICLE_LENGTH
    width: float = config.VEHICLE_WIDTH
    lane: int = 0
    target_lane: int = 0
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    jx: float = 0.0
    jy: float = 0.0

    def __post_init__(self):
        if self.length <= 0:
            raise WorldError("vehicle length must be positive")
        if self.speed < 0:
            raise WorldError("speed must be nonnegative")
        if self.vx == 0.0 and self.vy == 0.0 and self.speed > 0.0:
            self.vx = self.speed * math.cos(self.heading)
            self.vy = self.speed * math.sin(self.heading)

    def copy(self) -> "VehicleState":
        return replace(self)

    @property
    def front(self) -> float:
        return self.x + 0.5 * self.length

    @property
    def rear(self) -> float:
        return self.x - 0.5 * self.length


def step_kinematics(state: VehicleState, speed: float, heading: float, dt: float) -> VehicleState:
    """Advance one physics step at commanded speed/heading.

    Positions integrate u*cos(theta) along-lane and u*sin(theta) laterally;
    acceleration and jerk come from backward differences of consecutive
    speeds, never from the commands themselves.
    """
    if not (math.isfinite(speed) and math.isfinite(heading) and math.isfinite(dt)):
        raise WorldError("non-finite kinematics input")
    if dt <= 0:
        raise WorldError("dt must be positive")
    if speed < 0:
        raise WorldError("speed must be nonnegative")

    vx = speed * math.cos(heading)
    vy = speed * math.sin(heading)
    ax = (vx - state.vx) / dt
    ay = (vy - state.vy) / dt
    accel = (speed - state.speed) / dt
    new = state.copy()
    new.x = state.x + vx * dt
    new.y = state.y + vy * dt
    new.heading = heading
    new.speed = speed
    new.jerk = (accel - state.accel) / dt
    new.accel = accel
    new.jx = (ax - state.ax) / dt
    new.jy = (ay - state.ay) / dt
    new.ax = ax
    new.ay = ay
    new.vx = vx
    new.vy = vy
    return new


def lane_gap(follower: VehicleState, leader: VehicleState) -> float:
    """Bumper-to-bumper longitudinal gap (negative when overlapping)."""
    return (leader.x - leader.length / 2.0) - (follower.x + follower.length / 2.0)


def compute_ttc(follower: VehicleState, leader: VehicleState) -> float:
    """Time-to-collision of follower onto leader along the lane.

    The bumper gap is unsigned, so the roles decide only the closing speed:
    an opening (or static) gap gives ``math.inf`` and already-overlapping
    vehicles give 0.0.
    """
    gap = abs(leader.x - follower.x) - 0.5 * (leader.length + follower.length)
    if gap <= 0.0:
        return 0.0
    closing = follower.speed * math.cos(follower.heading) - leader.speed * math.cos(leader.heading)
    if closing <= 0.0:
        return math.inf
    return gap / closing


def _rect_axes_corners(v: VehicleState):
    c, s = math.cos(v.heading), math.sin(v.heading)
    hl, hw = v.length / 2.0, v.width / 2.0
    ax_ = (c, s)
    ay_ = (-s, c)
    corners = []
    for dx, dy in ((hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)):
        corners.append((v.x + dx * c - dy * s, v.y + dx * s + dy * c))
    return (ax_, ay_), corners


def check_collision(a: VehicleState, b: VehicleState) -> bool:
    """Oriented-rectangle overlap via the separating axis test (closed boundaries)."""
    # fast reject: bounding circles
    r = 0.5 * math.hypot(a.length, a.width) + 0.5 * math.hypot(b.length, b.width)
    if (a.x - b.x) ** 2 + (a.y - b.y) ** 2 > r * r:
        return False
    axes_a, corners_a = _rect_axes_corners(a)
    axes_b, corners_b = _rect_axes_corners(b)
    for ux, uy in (*axes_a, *axes_b):
        pa = [cx * ux + cy * uy for cx, cy in corners_a]
        pb = [cx * ux + cy * uy for cx, cy in corners_b]
        if max(pa) < min(pb) or max(pb) < min(pa):
            return False
    return True


def build_llpf_topology(n: int):
    """Communication adjacency for an n-vehicle string (vehicle 0 leads).

    Entry [i][j] is 1 when information flows from i to j: the leader reaches
    everyone, and every vehicle reaches all vehicles behind it.
    """
    if n < 2:
        raise WorldError("topology needs at least 2 vehicles")
    return [[1 if (i == 0 or i < j) and i != j else 0 for j in range(n)] for i in range(n)]


@dataclass
class SimClock:
    t: float = 0.0
    dt: float = config.DT
    decision_period_vehicle: float = config.VEHICLE_DECISION_PERIOD
    decision_period_platoon: float = config.PLATOON_DECISION_PERIOD

    def __post_init__(self):
        if self.dt <= 0:
            raise WorldError("dt must be positive")
        for period in (self.decision_period_vehicle, self.decision_period_platoon):
            steps = period / self.dt
            if abs(steps - round(steps)) > 1e-9:
                raise WorldError("decision periods must be integer multiples of dt")

    @property
    def frame(self) -> int:
        return int(round(self.t / self.dt))

    def vehicle_decision_due(self) -> bool:
        return self.frame % int(round(self.decision_period_vehicle / self.dt)) == 0

    def platoon_decision_due(self) -> bool:
        return self.frame % int(round(self.decision_period_platoon / self.dt)) == 0

    def tick(self):
        self.t = round(self.t + self.dt, 9)


def lead_vehicle(ego: VehicleState, others, lateral_tol: float = 2.5):
    """Nearest vehicle ahead of ego with lateral overlap, or None."""
    best = None
    best_dx = math.inf
    for v in others:
        if v.id == ego.id:
            continue
        dx = v.x - ego.x
        if dx <= 0.0 or abs(v.y - ego.y) >= lateral_tol:
            continue
        if dx < best_dx:
            best_dx = dx
            best = v
    return best


def rear_vehicle(ego: VehicleState, others, lateral_tol: float = 2.5):
    """Nearest vehicle behind ego with lateral overlap, or None."""
    best = None
    best_dx = math.inf
    for v in others:
        if v.id == ego.id:
            continue
        dx = ego.x - v.x
        if dx <= 0.0 or abs(v.y - ego.y) >= lateral_tol:
            continue
        if dx < best_dx:
            best_dx = dx
            best = v
    return best
