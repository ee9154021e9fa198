"""Episodic highway lane-change environment."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .drivers import (ABSENT_LANE, B_HARD, HEADING_TOL, K_PSI, K_Y, LATERAL_TOL, Action,
                      DriverProfile, Neighbor, NeighborView, mobil_decision)
from .kernels import NO_TARGET
from .road import DT, STEER_MAX, VehicleGeometry
from .safety import BlindSpotWindow, SafetyLayer, window_occupants
from .scenario import ScenarioConfig, WorldState, generate_scenario

PAD_SLOT = (1.0, 0.0, 0.0)
TERMINAL_REWARD = 100.0


class Status(Enum):
    RUNNING = "running"
    SOLVED = "solved"
    COLLIDED = "collided"
    TRUNCATED = "truncated"

    @property
    def terminal(self) -> bool:
        """True terminal states; truncation is a time limit, not a terminal."""
        return self in (Status.SOLVED, Status.COLLIDED)

    @property
    def done(self) -> bool:
        return self is not Status.RUNNING


@dataclass(frozen=True)
class ObservationSpec:
    mode: str = "full"
    slots: int = 20
    sensor_range: float = 100.0
    v_norm: float = 40.0
    y_max: float = 11.25
    v_d_ego: float = 25.0

    def __post_init__(self):
        if self.mode not in ("full", "compact"):
            raise ValueError(f"unknown observation mode {self.mode!r}")

    @property
    def size(self) -> int:
        return 2 + 3 * self.slots

    @classmethod
    def for_scenario(cls, scenario: ScenarioConfig, mode: str = "full", n_max: int = 20,
                     **kw) -> "ObservationSpec":
        slots = n_max if mode == "full" else 2 * scenario.max_lanes
        return cls(mode=mode, slots=slots, y_max=scenario.max_lanes * scenario.lane_width,
                   v_d_ego=scenario.v_d_ego, **kw)


@dataclass(frozen=True)
class EnvConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    observation: str = "full"
    n_max: int = 20
    sensor_range: float = 100.0
    v_norm: float = 40.0
    decision_period: float = 1.0
    dt: float = DT
    eps_v: float = 0.1
    speed_reference: str = "step"  # "step": speed at the previous decision; "episode": at reset
    max_steps: int = 1000
    lock_radius: float = 100.0
    lock_slow_margin: float = 2.0
    lock_decisions: int = 10
    unlock_boost: float = 2.0
    traffic_unlock: bool = True
    k_y: float = K_Y
    k_psi: float = K_PSI
    steer_max: float = STEER_MAX
    b_hard: float = B_HARD
    geometry: VehicleGeometry = field(default_factory=VehicleGeometry)

    @property
    def substeps(self) -> int:
        return int(round(self.decision_period / self.dt))

    def observation_spec(self) -> ObservationSpec:
        return ObservationSpec.for_scenario(self.scenario, self.observation, self.n_max,
                                            sensor_range=self.sensor_range, v_norm=self.v_norm)


@dataclass
class StepInfo:
    safety_violation: bool = False
    requested_action: Action = Action.KEEP_LANE
    executed_action: Action = Action.KEEP_LANE
    lane_changes_so_far: int = 0
    distance_traveled: float = 0.0
    collision: str = "none"
    lane_change_collision: bool = False
    background_overlaps: int = 0


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    status: Status
    info: StepInfo


def compute_reward(v_current: float, v_initial: float, v_d: float, lane_change_executed: bool,
                   safety_violation: bool, status: Status) -> float:
    if v_d <= 0:
        raise ValueError("v_d must be positive")
    if status is Status.COLLIDED:
        return -TERMINAL_REWARD
    if status is Status.SOLVED:
        return TERMINAL_REWARD
    reward = (v_current - v_initial) / v_d
    if lane_change_executed:
        reward -= 1.0
    if safety_violation:
        reward -= 1.0
    return reward


def observe(world: WorldState, spec: ObservationSpec, rng: Optional[np.random.Generator] = None,
            noise_enabled: bool = False, sigma_pos: float = 0.5,
            sigma_vel: float = 0.5) -> np.ndarray:
    """Ego-centred normalised feature vector.

    ``[v/v_d, y/y_max]`` followed by ``spec.slots`` triples
    ``(ds/sensor_range, dv/v_norm, dy/y_max)``; missing vehicles are padded with
    ``PAD_SLOT``. Noise perturbs ``ds`` and ``dv`` of observed vehicles only.
    """
    ego = world.ego
    obs = np.empty(spec.size)
    obs[0] = world.v[ego] / spec.v_d_ego
    obs[1] = world.y[ego] / spec.y_max
    others = np.array([i for i in range(world.n) if i != ego], dtype=np.int64)
    ds = world.s[others] - world.s[ego]
    if spec.mode == "full":
        order = np.lexsort((others, np.abs(ds)))[:spec.slots]
        chosen = [int(others[k]) for k in order]
        slot_pos = list(range(len(chosen)))
    else:
        lanes = np.array([world.lane(int(i)) for i in others], dtype=np.int64)
        chosen, slot_pos = [], []
        for lane in range(world.road.lane_count):
            in_lane = lanes == lane
            ahead = np.flatnonzero(in_lane & (ds > 0))
            behind = np.flatnonzero(in_lane & (ds <= 0))
            if ahead.size:
                chosen.append(int(others[ahead[np.argmin(ds[ahead])]]))
                slot_pos.append(2 * lane)
            if behind.size:
                chosen.append(int(others[behind[np.argmax(ds[behind])]]))
                slot_pos.append(2 * lane + 1)
    slots = np.tile(np.array(PAD_SLOT), (spec.slots, 1))
    if chosen:
        idx = np.array(chosen, dtype=np.int64)
        rel_s = world.s[idx] - world.s[ego]
        rel_v = world.v[idx] - world.v[ego]
        if noise_enabled:
            if rng is None:
                raise ValueError("noise requires an rng")
            eps = rng.normal(size=(len(idx), 2))
            rel_s = rel_s + sigma_pos * eps[:, 0]
            rel_v = rel_v + sigma_vel * eps[:, 1]
        slots[slot_pos, 0] = rel_s / spec.sensor_range
        slots[slot_pos, 1] = rel_v / spec.v_norm
        slots[slot_pos, 2] = (world.y[idx] - world.y[ego]) / spec.y_max
    obs[2:] = slots.ravel()
    return np.clip(obs, -1.0, 1.0)


def neighbor_views(world: WorldState, i: int, leader: np.ndarray, follower: np.ndarray,
                   rng: Optional[np.random.Generator] = None, sigma_pos: float = 0.0,
                   sigma_vel: float = 0.0) -> Tuple[NeighborView, NeighborView, NeighborView]:
    """(current, left, right) lane views of vehicle ``i`` from a neighbour table."""
    length = world.geom.length
    lane = world.lane(i)
    noisy = rng is not None and (sigma_pos > 0 or sigma_vel > 0)

    def neighbor(j: int, ahead: bool, clamp: bool) -> Optional[Neighbor]:
        if j < 0:
            return None
        gap = (world.s[j] - world.s[i] if ahead else world.s[i] - world.s[j]) - length
        speed = float(world.v[j])
        if noisy:
            gap += sigma_pos * rng.normal()
            speed = max(0.0, speed + sigma_vel * rng.normal())
        if clamp:
            gap = max(gap, 0.01)
        return Neighbor(float(gap), speed, world.profiles[j])

    def view(k: int, clamp: bool = False) -> NeighborView:
        if not world.road.has_lane(k):
            return ABSENT_LANE
        return NeighborView(True, neighbor(int(leader[i, k]), True, clamp),
                            neighbor(int(follower[i, k]), False, clamp))

    return view(lane, clamp=True), view(lane + 1), view(lane - 1)


def _tables(world: WorldState):
    lo, hi = kernels.occupancy(world.y, world.target, world.road.lane_width,
                               world.road.lane_count, world.geom.width)
    return kernels.neighbor_table(world.s, lo, hi, world.road.lane_count)


def background_lane_changes(world: WorldState, b_hard: float = B_HARD) -> int:
    """Let every idle non-ego vehicle take a MOBIL decision; returns changes started."""
    leader, follower = _tables(world)
    started = 0
    for i in range(world.n):
        if i == world.ego or world.maneuvering(i):
            continue
        current, left, right = neighbor_views(world, i, leader, follower)
        decision = mobil_decision(world.vehicle(i), world.profiles[i], current, left, right,
                                  world.geom.length, b_hard)
        if decision is not Action.KEEP_LANE:
            world.target[i] = world.lane(i) + decision.lane_offset
            started += 1
            leader, follower = _tables(world)
    return started


def lane_locked(world: WorldState, lane: int, v_d_ego: float, radius: float) -> Optional[int]:
    """Nearest slow vehicle ahead of the ego within ``radius`` in ``lane``, if any."""
    ego = world.ego
    best = None
    for i in range(world.n):
        ds = world.s[i] - world.s[ego]
        if i != ego and world.lane(i) == lane and 0 < ds <= radius \
                and world.profiles[i].v_set < v_d_ego:
            if best is None or ds < world.s[best] - world.s[ego]:
                best = i
    return best


def apply_traffic_unlock(world: WorldState, rng: np.random.Generator, v_d_ego: float = 25.0,
                         radius: float = 100.0, slow_margin: float = 2.0,
                         decisions: int = 10, boost: float = 2.0) -> Optional[int]:
    """Speed up one blocker when every lane is locked and the ego has been slow.

    Returns the index of the boosted vehicle, or ``None``.
    """
    if world.v[world.ego] < v_d_ego - slow_margin:
        world.slow_decisions += 1
    else:
        world.slow_decisions = 0
    if world.slow_decisions < decisions:
        return None
    blockers = [lane_locked(world, lane, v_d_ego, radius) for lane in range(world.road.lane_count)]
    if any(b is None for b in blockers):
        return None
    chosen = blockers[int(rng.integers(len(blockers)))]
    new_speed = float(rng.uniform(v_d_ego, v_d_ego + boost))
    world.set_profile(chosen, world.profiles[chosen].with_speed(new_speed))
    world.slow_decisions = 0
    return chosen


TRACE_FIELDS = ["t", "ego_s", "ego_y", "ego_v", "action_requested", "action_executed", "reward",
                "status", "safety_violation"]


class HighwayEnv:
    """Single-threaded episodic environment.

    ``reset`` draws a new scenario from the environment's own generator, so a
    sequence of episodes is fully determined by the constructor seed.
    """

    def __init__(self, config: EnvConfig = EnvConfig(), safety: Optional[SafetyLayer] = None,
                 seed: Optional[int] = None, ego_profile: Optional[DriverProfile] = None,
                 record_trace: bool = False):
        self.config = config
        self.safety = safety if safety is not None else SafetyLayer(enabled=False)
        self.spec = config.observation_spec()
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.ego_profile = ego_profile
        self.record_trace = record_trace
        self.trace: List[Dict] = []
        self.world: Optional[WorldState] = None
        self.status = Status.TRUNCATED
        self.steps = 0
        self.lane_changes = 0
        self._window_occupants: List[int] = []

    @property
    def observation_size(self) -> int:
        return self.spec.size

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
            self.seed = seed
        sc = self.config.scenario
        self.world = generate_scenario(sc, self.rng, self.ego_profile, self.config.geometry)
        self.status = Status.RUNNING
        self.steps = 0
        self.lane_changes = 0
        self._window_occupants = []
        self.trace = []
        return self.observe()

    def observe(self) -> np.ndarray:
        sc = self.config.scenario
        return observe(self.world, self.spec, self.rng, sc.noise_enabled, sc.sigma_pos,
                       sc.sigma_vel)

    def ego_views(self) -> Tuple[NeighborView, NeighborView, NeighborView]:
        """Ego's MOBIL views, measured with noise when the scenario is noisy."""
        sc = self.config.scenario
        leader, follower = _tables(self.world)
        if sc.noise_enabled:
            return neighbor_views(self.world, self.world.ego, leader, follower, self.rng,
                                  sc.sigma_pos, sc.sigma_vel)
        return neighbor_views(self.world, self.world.ego, leader, follower)

    def step(self, action) -> StepResult:
        if self.world is None or self.status.done:
            raise RuntimeError("step() called on a finished episode; call reset() first")
        cfg = self.config
        world = self.world
        ego = world.ego
        requested = Action(int(action))
        info = StepInfo(requested_action=requested)
        v_before = float(world.v[ego])

        executed = requested
        if world.maneuvering(ego) and requested is not Action.KEEP_LANE:
            executed = Action.KEEP_LANE
        else:
            verdict = self.safety.evaluate(world, requested)
            if not verdict.safe:
                executed = verdict.overwritten_action
                info.safety_violation = True
        info.executed_action = executed

        changed = executed is not Action.KEEP_LANE
        if changed:
            target = world.lane(ego) + executed.lane_offset
            self._window_occupants = window_occupants(world, target, self.safety.window) \
                if world.road.has_lane(target) else []
            world.target[ego] = target
            self.lane_changes += 1

        background_lane_changes(world, cfg.b_hard)

        g = world.geom
        status_code, other, overlaps, _ = kernels.advance_world(
            world.s, world.y, world.psi, world.v, world.a, world.target, world.idm,
            world.road.lane_width, world.road.lane_count, g.length, g.width, g.l_f, g.l_r,
            cfg.dt, cfg.substeps, cfg.k_y, cfg.k_psi, cfg.steer_max, cfg.b_hard, ego,
            LATERAL_TOL, HEADING_TOL)
        world.time += cfg.decision_period
        self.steps += 1
        info.background_overlaps = int(overlaps)
        if not world.maneuvering(ego):
            self._window_occupants = []

        sc = cfg.scenario
        if status_code == 1:
            status = Status.COLLIDED
            info.collision = "vehicle"
            info.lane_change_collision = world.maneuvering(ego) and other in self._window_occupants
        elif status_code == 2:
            status = Status.COLLIDED
            info.collision = "road_departure"
        elif world.v[ego] >= sc.v_d_ego - cfg.eps_v:
            status = Status.SOLVED
        elif world.distance_traveled() >= sc.d_max or self.steps >= cfg.max_steps:
            status = Status.TRUNCATED
        else:
            status = Status.RUNNING

        v_ref = v_before if cfg.speed_reference == "step" else world.v_initial
        reward = compute_reward(float(world.v[ego]), v_ref, sc.v_d_ego, changed,
                                info.safety_violation, status)
        if status is Status.RUNNING and cfg.traffic_unlock:
            apply_traffic_unlock(world, self.rng, sc.v_d_ego, cfg.lock_radius,
                                 cfg.lock_slow_margin, cfg.lock_decisions, cfg.unlock_boost)
        self.status = status
        info.lane_changes_so_far = self.lane_changes
        info.distance_traveled = world.distance_traveled()
        obs = self.observe()
        if self.record_trace:
            self.trace.append({
                "t": round(world.time, 6), "ego_s": float(world.s[ego]),
                "ego_y": float(world.y[ego]), "ego_v": float(world.v[ego]),
                "action_requested": requested.name.lower(),
                "action_executed": executed.name.lower(), "reward": reward,
                "status": status.value, "safety_violation": int(info.safety_violation),
            })
        return StepResult(obs, reward, status, info)

    def write_trace(self, path, header: Optional[Dict] = None) -> None:
        """CSV trace of the current episode; ``header`` is echoed as a JSON comment."""
        with open(path, "w", newline="") as fh:
            fh.write("# schema=safelane.trace/1\n")
            if header is not None:
                fh.write("# header=" + json.dumps(header, sort_keys=True) + "\n")
            writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS)
            writer.writeheader()
            writer.writerows(self.trace)


def read_trace(path) -> Tuple[Dict, List[Dict]]:
    header: Dict = {}
    lines = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("# header="):
                header = json.loads(line[len("# header="):])
            elif not line.startswith("#"):
                lines.append(line)
    return header, list(csv.DictReader(lines))


def env_config_to_dict(cfg: EnvConfig) -> Dict:
    return asdict(cfg)
