"""Blind-spot safety layer.

Lane changes toward a missing lane or into an occupied stretch of the adjacent
lane are overwritten with ``KEEP_LANE``; the verdict is fed back to the agent as
a reward penalty by the environment.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List

from .drivers import Action
from .kernels import occupancy
from .scenario import WorldState


class UnsafeReason(Enum):
    NONE = "none"
    OFF_ROAD = "off_road"
    BLIND_SPOT_OCCUPIED = "blind_spot_occupied"


@dataclass(frozen=True)
class BlindSpotWindow:
    rear_extent: float = 12.0
    front_extent: float = 8.0

    def __post_init__(self):
        if self.rear_extent <= 0 or self.front_extent <= 0:
            raise ValueError("blind-spot extents must be positive")


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    reason: UnsafeReason
    overwritten_action: Action


def window_occupants(world: WorldState, lane: int, window: BlindSpotWindow) -> List[int]:
    """Vehicles occupying ``lane`` whose body intersects the ego's blind-spot window."""
    ego = world.ego
    half = 0.5 * world.geom.length
    rear = world.s[ego] - half - window.rear_extent
    front = world.s[ego] + half + window.front_extent
    lo, hi = occupancy(world.y, world.target, world.road.lane_width, world.road.lane_count,
                       world.geom.width)
    return [j for j in range(world.n)
            if j != ego and lo[j] <= lane <= hi[j]
            and world.s[j] - half < front and world.s[j] + half > rear]


def evaluate_action(world: WorldState, requested: Action,
                    window: BlindSpotWindow = BlindSpotWindow()) -> SafetyVerdict:
    requested = Action(requested)
    if requested is Action.KEEP_LANE:
        return SafetyVerdict(True, UnsafeReason.NONE, requested)
    target = world.lane(world.ego) + requested.lane_offset
    if not world.road.has_lane(target):
        return SafetyVerdict(False, UnsafeReason.OFF_ROAD, Action.KEEP_LANE)
    if window_occupants(world, target, window):
        return SafetyVerdict(False, UnsafeReason.BLIND_SPOT_OCCUPIED, Action.KEEP_LANE)
    return SafetyVerdict(True, UnsafeReason.NONE, requested)


@dataclass(frozen=True)
class SafetyLayer:
    """Toggleable wrapper; a disabled layer approves everything."""

    window: BlindSpotWindow = BlindSpotWindow()
    enabled: bool = True

    def evaluate(self, world: WorldState, requested: Action) -> SafetyVerdict:
        if not self.enabled:
            return SafetyVerdict(True, UnsafeReason.NONE, Action(requested))
        return evaluate_action(world, requested, self.window)
