"""Driver behaviour: IDM car following, MOBIL lane changes, lateral control."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import IntEnum
from typing import Dict, Mapping, Optional, Tuple

from .road import STEER_MAX, RoadGeometry, VehicleState

B_HARD = 9.0

# Lateral controller gains; see tests/test_drivers.py for the completion-time check.
K_Y = 0.075
K_PSI = 1.5
LATERAL_TOL = 0.1
HEADING_TOL = 0.01


@dataclass(frozen=True)
class DriverProfile:
    v_set: float
    T_set: float
    d0: float
    a_max: float
    b: float
    delta: float = 4.0
    p: float = 0.0
    q: Optional[float] = None
    a_th: float = 0.0
    b_safe: float = 2.0

    def __post_init__(self):
        if self.q is None:
            object.__setattr__(self, "q", self.p)
        if self.a_max <= 0 or self.b <= 0 or self.b_safe <= 0:
            raise ValueError("a_max, b and b_safe must be positive")
        if self.T_set < 0 or self.d0 < 0:
            raise ValueError("T_set and d0 must be non-negative")
        if not (0 <= self.p <= 1 and 0 <= self.q <= 1):
            raise ValueError("politeness factors must lie in [0, 1]")

    def with_speed(self, v_set: float) -> "DriverProfile":
        return replace(self, v_set=v_set)

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))

    @classmethod
    def from_mapping(cls, values: Mapping[str, float]) -> "DriverProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown driver profile keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in values.items()})


PROFILES: Dict[str, DriverProfile] = {
    "normal": DriverProfile(v_set=25.0, T_set=1.5, d0=2.0, a_max=1.4, b=2.0,
                            p=0.05, a_th=0.1, b_safe=2.0),
    "timid": DriverProfile(v_set=19.4, T_set=2.0, d0=4.0, a_max=0.8, b=1.0,
                           p=0.1, a_th=0.2, b_safe=1.0),
    "aggressive": DriverProfile(v_set=30.6, T_set=1.0, d0=0.0, a_max=2.0, b=3.0,
                                p=0.0, a_th=0.0, b_safe=3.0),
}


def idm_acceleration(v: float, leader: Optional[Tuple[float, float]],
                     profile: DriverProfile, b_hard: float = B_HARD) -> float:
    """IDM acceleration for speed ``v``.

    Args:
        v: own speed (m/s), non-negative.
        leader: ``(gap, dv)`` with bumper-to-bumper gap in metres and
            ``dv = v - v_leader``, or ``None`` on a free road.
        profile: driver parameters.
        b_hard: physical braking limit used as the lower output clamp.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    free = (v / profile.v_set) ** profile.delta
    interaction = 0.0
    if leader is not None:
        gap, dv = leader
        if gap <= 0:
            raise ValueError(f"leader gap must be positive, got {gap}")
        d_star = profile.d0 + v * profile.T_set + v * dv / (2.0 * math.sqrt(profile.a_max * profile.b))
        d_star = max(d_star, 0.0)
        interaction = (d_star / gap) ** 2
    acc = profile.a_max * (1.0 - free - interaction)
    return min(max(acc, -b_hard), profile.a_max)


class Action(IntEnum):
    KEEP_LANE = 0
    CHANGE_LEFT = 1
    CHANGE_RIGHT = 2

    @property
    def lane_offset(self) -> int:
        return (0, 1, -1)[self]


@dataclass(frozen=True)
class Neighbor:
    """Another vehicle as seen from the subject. ``gap`` is bumper to bumper."""

    gap: float
    speed: float
    profile: Optional[DriverProfile] = None


@dataclass(frozen=True)
class NeighborView:
    """Leader and follower of the subject within one lane."""

    exists: bool = True
    leader: Optional[Neighbor] = None
    follower: Optional[Neighbor] = None


ABSENT_LANE = NeighborView(exists=False)


def _follow(v: float, leader: Optional[Neighbor], gap: Optional[float], profile: DriverProfile,
            b_hard: float) -> float:
    if leader is None:
        return idm_acceleration(v, None, profile, b_hard)
    return idm_acceleration(v, (gap, v - leader.speed), profile, b_hard)


def mobil_gain(v: float, profile: DriverProfile, current: NeighborView, target: NeighborView,
               length: float = 5.0, b_hard: float = B_HARD) -> Optional[float]:
    """Incentive surplus for moving into ``target``; ``None`` when unsafe or impossible.

    The surplus is the MOBIL incentive minus the changing threshold, so a lane
    change is warranted when the result is positive.
    """
    if not target.exists:
        return None
    lead, foll = target.leader, target.follower
    if (lead is not None and lead.gap <= 0) or (foll is not None and foll.gap <= 0):
        return None

    a_e = _follow(v, current.leader, current.leader.gap if current.leader else None, profile, b_hard)
    a_e_new = _follow(v, lead, lead.gap if lead else None, profile, b_hard)

    gain_new = 0.0
    if foll is not None:
        fp = foll.profile or profile
        a_n_new = idm_acceleration(foll.speed, (foll.gap, foll.speed - v), fp, b_hard)
        if a_n_new < -profile.b_safe:
            return None
        gap_without = foll.gap + length + lead.gap if lead is not None else None
        a_n = _follow(foll.speed, lead, gap_without, fp, b_hard)
        gain_new = a_n_new - a_n

    gain_old = 0.0
    old = current.follower
    if old is not None and old.gap > 0:
        op = old.profile or profile
        a_o = idm_acceleration(old.speed, (old.gap, old.speed - v), op, b_hard)
        cur_lead = current.leader
        gap_without = old.gap + length + cur_lead.gap if cur_lead is not None else None
        a_o_new = _follow(old.speed, cur_lead, gap_without, op, b_hard)
        gain_old = a_o_new - a_o

    incentive = a_e_new - a_e + profile.p * gain_new + profile.q * gain_old
    return incentive - profile.a_th


def mobil_decision(subject: VehicleState, profile: DriverProfile, current: NeighborView,
                   left: NeighborView = ABSENT_LANE, right: NeighborView = ABSENT_LANE,
                   length: float = 5.0, b_hard: float = B_HARD) -> Action:
    """Choose keep / left / right with the MOBIL safety and incentive criteria.

    Lanes that do not exist must be passed as ``ABSENT_LANE``. Among directions
    passing both criteria the larger surplus wins, exact ties go left.
    """
    best, best_gain = Action.KEEP_LANE, 0.0
    for decision, view in ((Action.CHANGE_LEFT, left), (Action.CHANGE_RIGHT, right)):
        gain = mobil_gain(subject.v, profile, current, view, length, b_hard)
        if gain is not None and gain > 0 and (best is Action.KEEP_LANE or gain > best_gain):
            best, best_gain = decision, gain
    return best


def lateral_steering(state: VehicleState, target_lane: int, road: RoadGeometry,
                     k_y: float = K_Y, k_psi: float = K_PSI,
                     steer_max: float = STEER_MAX) -> float:
    """Proportional lateral-offset plus heading feedback toward a lane centre."""
    if not road.has_lane(target_lane):
        raise ValueError(f"lane {target_lane} does not exist")
    err = state.y - road.lane_center(target_lane)
    steer = -k_y * err - k_psi * state.psi
    return min(max(steer, -steer_max), steer_max)


def maneuver_complete(state: VehicleState, target_lane: int, road: RoadGeometry) -> bool:
    return (abs(state.y - road.lane_center(target_lane)) < LATERAL_TOL
            and abs(state.psi) < HEADING_TOL)
