"""Road geometry, kinematic bicycle model and collision detection.

Coordinates: ``s`` runs along the road, ``y`` is lateral with ``y = 0`` at the
right road edge, so lane 0 is the rightmost lane and "left" means larger ``y``.
``(s, y)`` is the geometric centre of the vehicle body.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

STEER_MAX = 0.3
DT = 0.1


@dataclass(frozen=True)
class RoadGeometry:
    lane_count: int = 3
    lane_width: float = 3.75
    episode_length: float = 5000.0

    def __post_init__(self):
        if self.lane_count not in (3, 4):
            raise ValueError(f"lane_count must be 3 or 4, got {self.lane_count}")
        if self.lane_width <= 0:
            raise ValueError("lane_width must be positive")

    @property
    def width(self) -> float:
        return self.lane_count * self.lane_width

    def lane_center(self, lane: int) -> float:
        return (lane + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        return min(max(int(math.floor(y / self.lane_width)), 0), self.lane_count - 1)

    def has_lane(self, lane: int) -> bool:
        return 0 <= lane < self.lane_count


@dataclass(frozen=True)
class VehicleGeometry:
    length: float = 5.0
    width: float = 2.0
    l_f: float = 1.4
    l_r: float = 1.4

    def __post_init__(self):
        if min(self.length, self.width, self.l_f, self.l_r) <= 0:
            raise ValueError("vehicle dimensions must be positive")


class Maneuver(Enum):
    NONE = 0
    CHANGING_LEFT = 1
    CHANGING_RIGHT = 2


@dataclass(frozen=True)
class VehicleState:
    s: float
    y: float
    psi: float = 0.0
    v: float = 0.0
    a: float = 0.0
    lane: int = 0
    maneuver: Maneuver = Maneuver.NONE
    target_lane: Optional[int] = None


def bicycle_step(state: VehicleState, accel: float, steer: float, dt: float = DT,
                 geom: VehicleGeometry = VehicleGeometry(),
                 road: Optional[RoadGeometry] = None,
                 steer_max: float = STEER_MAX) -> VehicleState:
    """Advance one explicit-Euler step of the kinematic bicycle model.

    The steering angle is saturated to ``steer_max`` and speed is floored at
    zero. When ``road`` is given the ``lane`` field is re-derived from ``y``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (math.isfinite(accel) and math.isfinite(steer)):
        raise ValueError("accel and steer must be finite")
    steer = min(max(steer, -steer_max), steer_max)
    beta = math.atan(geom.l_r * math.tan(steer) / (geom.l_f + geom.l_r))
    v = state.v
    s = state.s + v * math.cos(state.psi + beta) * dt
    y = state.y + v * math.sin(state.psi + beta) * dt
    psi = state.psi + (v / geom.l_r) * math.sin(beta) * dt
    lane = road.lane_of(y) if road is not None else state.lane
    return replace(state, s=s, y=y, psi=psi, v=max(0.0, v + accel * dt), a=accel, lane=lane)


class CollisionKind(Enum):
    NONE = 0
    VEHICLE = 1
    ROAD_DEPARTURE = 2


@dataclass(frozen=True)
class CollisionReport:
    kind: CollisionKind = CollisionKind.NONE
    index: Optional[int] = None

    def __bool__(self):
        return self.kind is not CollisionKind.NONE


def boxes_overlap(s1: float, y1: float, s2: float, y2: float, geom: VehicleGeometry) -> bool:
    # axis-aligned rectangles of identical size; touching edges do not count
    return abs(s1 - s2) < geom.length and abs(y1 - y2) < geom.width


def off_road(y: float, geom: VehicleGeometry, road: RoadGeometry) -> bool:
    half = 0.5 * geom.width
    return y - half < 0.0 or y + half > road.width


def check_collision(ego: VehicleState, others: Sequence[VehicleState],
                    geom: VehicleGeometry = VehicleGeometry(),
                    road: RoadGeometry = RoadGeometry()) -> CollisionReport:
    """Vehicle overlap takes precedence over road departure."""
    for i, other in enumerate(others):
        if boxes_overlap(ego.s, ego.y, other.s, other.y, geom):
            return CollisionReport(CollisionKind.VEHICLE, i)
    if off_road(ego.y, geom, road):
        return CollisionReport(CollisionKind.ROAD_DEPARTURE)
    return CollisionReport()
