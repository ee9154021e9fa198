"""Randomised highway scenarios and the mutable world state."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .drivers import PROFILES, DriverProfile
from .kernels import NO_TARGET
from .road import Maneuver, RoadGeometry, VehicleGeometry, VehicleState

PROFILE_MODES = ("all_normal", "uniform_random")
MAX_PLACEMENT_TRIES = 1000


class ScenarioGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    lane_counts: Tuple[int, ...] = (3,)
    vehicle_count: Tuple[int, int] = (8, 8)  # surrounding vehicles, ego excluded
    d_long: float = 200.0
    d_min_gap: float = 25.0
    rear_speed: Tuple[float, float] = (15.0, 25.0)
    front_speed: Tuple[float, float] = (10.0, 18.0)
    ego_speed: Tuple[float, float] = (10.0, 15.0)
    other_desired_speed: Tuple[float, float] = (18.0, 26.0)
    v_d_ego: float = 25.0
    ego_cruise_margin: float = 2.0  # ego IDM set-speed sits this far above v_d_ego
    d_max: float = 5000.0
    blocker_range: Tuple[float, float] = (25.0, 100.0)
    lane_width: float = 3.75
    driver_profile_mode: str = "all_normal"
    desired_speed_source: str = "range"  # "range": other_desired_speed; "profile": Table III v_set
    noise_enabled: bool = False
    sigma_pos: float = 0.5
    sigma_vel: float = 0.5

    def __post_init__(self):
        if not self.lane_counts or any(n not in (3, 4) for n in self.lane_counts):
            raise ValueError("lane_counts must be drawn from {3, 4}")
        lo, hi = self.vehicle_count
        if not (0 < lo <= hi):
            raise ValueError("vehicle_count range must be positive and non-empty")
        for name in ("rear_speed", "front_speed", "ego_speed", "other_desired_speed",
                     "blocker_range"):
            a, b = getattr(self, name)
            if a > b:
                raise ValueError(f"{name} range is empty")
        if self.d_min_gap >= self.d_long:
            raise ValueError("d_min_gap must be smaller than d_long")
        if self.driver_profile_mode not in PROFILE_MODES:
            raise ValueError(f"driver_profile_mode must be one of {PROFILE_MODES}")
        if self.desired_speed_source not in ("range", "profile"):
            raise ValueError("desired_speed_source must be 'range' or 'profile'")
        if self.other_desired_speed[0] >= self.v_d_ego:
            raise ValueError("no desired speed below v_d_ego is available for the blocker")

    @property
    def max_lanes(self) -> int:
        return max(self.lane_counts)


def config_a(**overrides) -> ScenarioConfig:
    """Benchmark A: three lanes, eight normal drivers, noise free."""
    return ScenarioConfig(**overrides)


def config_b(**overrides) -> ScenarioConfig:
    """Benchmark B: twenty mixed drivers with measurement noise."""
    base = dict(lane_counts=(3, 4), vehicle_count=(20, 20),
                driver_profile_mode="uniform_random", desired_speed_source="profile",
                noise_enabled=True)
    base.update(overrides)
    return ScenarioConfig(**base)


BENCHMARKS = {"A": config_a, "B": config_b}


@dataclass
class WorldState:
    """All vehicles as parallel arrays; index ``ego`` is the controlled vehicle."""

    road: RoadGeometry
    geom: VehicleGeometry
    s: np.ndarray
    y: np.ndarray
    psi: np.ndarray
    v: np.ndarray
    a: np.ndarray
    target: np.ndarray
    profiles: List[DriverProfile]
    profile_names: List[str]
    ego: int = 0
    v_initial: float = 0.0
    s_start: float = 0.0
    time: float = 0.0
    slow_decisions: int = 0
    idm: np.ndarray = field(init=False)

    def __post_init__(self):
        self.refresh_idm()

    def refresh_idm(self):
        self.idm = np.array([[p.v_set, p.T_set, p.d0, p.a_max, p.b, p.delta]
                             for p in self.profiles], dtype=np.float64)

    def set_profile(self, i: int, profile: DriverProfile, name: Optional[str] = None):
        self.profiles[i] = profile
        if name is not None:
            self.profile_names[i] = name
        self.idm[i] = (profile.v_set, profile.T_set, profile.d0, profile.a_max, profile.b,
                       profile.delta)

    @property
    def n(self) -> int:
        return len(self.s)

    def lane(self, i: int) -> int:
        return self.road.lane_of(self.y[i])

    def maneuvering(self, i: int) -> bool:
        return int(self.target[i]) != NO_TARGET

    def distance_traveled(self) -> float:
        return float(self.s[self.ego] - self.s_start)

    def vehicle(self, i: int) -> VehicleState:
        t = int(self.target[i])
        lane = self.lane(i)
        if t == NO_TARGET:
            maneuver, target_lane = Maneuver.NONE, None
        else:
            maneuver = Maneuver.CHANGING_LEFT if t > lane else Maneuver.CHANGING_RIGHT
            target_lane = t
        return VehicleState(s=float(self.s[i]), y=float(self.y[i]), psi=float(self.psi[i]),
                            v=float(self.v[i]), a=float(self.a[i]), lane=lane,
                            maneuver=maneuver, target_lane=target_lane)

    def copy(self) -> "WorldState":
        w = WorldState(self.road, self.geom, self.s.copy(), self.y.copy(), self.psi.copy(),
                       self.v.copy(), self.a.copy(), self.target.copy(), list(self.profiles),
                       list(self.profile_names), self.ego, self.v_initial, self.s_start,
                       self.time, self.slow_decisions)
        return w


def _pick_profile(config: ScenarioConfig, rng: np.random.Generator) -> str:
    if config.driver_profile_mode == "all_normal":
        return "normal"
    names = sorted(PROFILES)
    return names[int(rng.integers(len(names)))]


def generate_scenario(config: ScenarioConfig, rng: np.random.Generator,
                      ego_profile: Optional[DriverProfile] = None,
                      geom: VehicleGeometry = VehicleGeometry()) -> WorldState:
    """Draw a random initial world.

    The ego starts at ``s = 0`` in a random lane. A slower blocker is always
    placed ahead of it in its own lane; the remaining vehicles are spread over
    ``[-d_long, d_long]`` with at least ``d_min_gap`` between same-lane
    neighbours. Desired speeds of background vehicles come from
    ``other_desired_speed`` whatever their driver profile.
    """
    lane_count = int(config.lane_counts[int(rng.integers(len(config.lane_counts)))])
    road = RoadGeometry(lane_count=lane_count, lane_width=config.lane_width,
                        episode_length=config.d_max)
    lo, hi = config.vehicle_count
    n_other = int(rng.integers(lo, hi + 1))

    ego_lane = int(rng.integers(lane_count))
    ego_v = float(rng.uniform(*config.ego_speed))
    lanes = [ego_lane]
    positions = [0.0]

    def fits(lane: int, s: float) -> bool:
        return all(l != lane or abs(s - p) >= config.d_min_gap for l, p in zip(lanes, positions))

    blocker_s = float(rng.uniform(*config.blocker_range))
    if not fits(ego_lane, blocker_s):
        raise ScenarioGenerationError("blocker range overlaps the ego spacing constraint")
    lanes.append(ego_lane)
    positions.append(blocker_s)

    for _ in range(n_other - 1):
        for _attempt in range(MAX_PLACEMENT_TRIES):
            lane = int(rng.integers(lane_count))
            s = float(rng.uniform(-config.d_long, config.d_long))
            if fits(lane, s):
                break
        else:
            raise ScenarioGenerationError(
                f"could not place {n_other} vehicles with {config.d_min_gap} m gaps "
                f"on {lane_count} lanes within +/-{config.d_long} m")
        lanes.append(lane)
        positions.append(s)

    n = len(positions)
    speeds = np.empty(n)
    speeds[0] = ego_v
    cruise = config.v_d_ego + config.ego_cruise_margin
    profiles: List[DriverProfile] = [(ego_profile or PROFILES["normal"]).with_speed(cruise)]
    names = ["ego"]
    for i in range(1, n):
        band = config.front_speed if positions[i] > 0 else config.rear_speed
        speeds[i] = rng.uniform(*band)
        if i == 1:
            desired = rng.uniform(config.other_desired_speed[0],
                                  min(config.other_desired_speed[1], config.v_d_ego))
        else:
            desired = rng.uniform(*config.other_desired_speed)
        name = _pick_profile(config, rng)
        if config.desired_speed_source == "profile" and i != 1:
            desired = PROFILES[name].v_set
        profiles.append(PROFILES[name].with_speed(float(desired)))
        names.append(name)

    lane_arr = np.array(lanes)
    return WorldState(
        road=road, geom=geom,
        s=np.array(positions, dtype=np.float64),
        y=(lane_arr + 0.5) * config.lane_width,
        psi=np.zeros(n), v=speeds, a=np.zeros(n),
        target=np.full(n, NO_TARGET, dtype=np.int64),
        profiles=profiles, profile_names=names, ego=0, v_initial=ego_v, s_start=0.0,
    )


def blocker_present(world: WorldState, v_d_ego: float) -> bool:
    """True when some vehicle ahead of the ego in its lane wants to drive slower than it."""
    ego = world.ego
    lane = world.lane(ego)
    for i in range(world.n):
        if i != ego and world.lane(i) == lane and world.s[i] > world.s[ego] \
                and world.profiles[i].v_set < v_d_ego:
            return True
    return False
