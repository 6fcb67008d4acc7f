"""Seeded ring-road highway simulator.

Vehicle 0 is the ego (agent) vehicle. Longitudinal motion follows a
Krauss-style safe-speed rule; other drivers change lanes with a
three-condition heuristic (speed gain, gap safety, cooperative yielding).
Lane indices grow to the right: lane 0 is the leftmost lane, so a *left*
change decrements the lane index.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..encoders.features import D_MAX, Observation, Scene, extract_features
from . import kernels as _kernels
from .drivers import (ACCEL, DECEL, EGO_DRIVER, HEADWAY, MIN_GAP, VEHICLE_LENGTH, DriverType,
                      sample_driver_pool)

KEEP, LEFT, RIGHT = 0, 1, 2
ACTIONS = (KEEP, LEFT, RIGHT)
ACTION_NAMES = ("keep", "left", "right")
LANE_CHANGE_PENALTY = 0.01
V_DESIRED = EGO_DRIVER.max_speed
# Slack kept between bumpers by the no-overlap speed cap.
OVERLAP_EPS = 1e-6


@dataclass(frozen=True)
class RingRoad:
    length: float = 1000.0
    lanes: int = 3
    dt: float = 0.5
    action_period: float = 2.0
    lane_change_duration: float = 2.0

    def __post_init__(self):
        if self.lanes < 1:
            raise ValueError("a road needs at least one lane")
        ratio = self.action_period / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError(f"action period {self.action_period} is not a multiple of dt {self.dt}")

    @property
    def steps_per_action(self) -> int:
        return int(round(self.action_period / self.dt))

    def capacity(self, length: float = VEHICLE_LENGTH, min_gap: float = MIN_GAP) -> int:
        return self.lanes * int(self.length // (length + min_gap))


@dataclass(frozen=True)
class LaneChangeParams:
    """Thresholds of the rule-based lane-change heuristic.

    A change for speed gain needs ``gain > gain_scale / lcSpeedGain`` m/s,
    where the anticipated speed in a lane is the driver's maxSpeed capped by
    the leader's speed if that leader is within ``lookahead`` metres.
    Cooperative yielding triggers when the follower is within ``coop_range``
    and wants to go at least ``coop_margin`` faster than the current speed.
    """

    gain_scale: float = 20.0
    lookahead: float = 60.0
    coop_range: float = 30.0
    coop_margin: float = 2.0


@dataclass
class ScenarioConfig:
    """One scenario: ``n_vehicles`` other vehicles plus the ego."""

    n_vehicles: int = 30
    lanes: int = 3
    seed: int = 0
    episode_length: int = 250
    driver_pool_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> ScenarioConfig:
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> ScenarioConfig:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Vehicle:
    id: int
    position: float
    lane: int
    speed: float
    driver: DriverType
    length: float = VEHICLE_LENGTH
    lane_change: tuple[int, float] | None = None  # (target lane, elapsed seconds)


def reward(v_ego: float, v_desired: float, action: int) -> float:
    """``1 - |v_ego - v_desired| / v_desired - p_lc`` with ``p_lc = 0.01`` for lane changes."""
    if v_desired <= 0:
        raise ValueError(f"v_desired must be positive, got {v_desired}")
    penalty = LANE_CHANGE_PENALTY if action in (LEFT, RIGHT) else 0.0
    return 1.0 - abs(v_ego - v_desired) / v_desired - penalty


def safe_speed(gap, v_leader, decel: float = DECEL, headway: float = HEADWAY, min_gap: float = MIN_GAP):
    """Krauss safe speed ``-b*tau + sqrt(b^2 tau^2 + v_l^2 + 2 b (gap - minGap))``."""
    bt = decel * headway
    inner = bt * bt + np.square(v_leader) + 2.0 * decel * (np.asarray(gap, dtype=np.float64) - min_gap)
    return -bt + np.sqrt(np.maximum(inner, 0.0))


def krauss_speed(speed, max_speed, gap, v_leader, dt: float, accel: float = ACCEL, decel: float = DECEL,
                 headway: float = HEADWAY, min_gap: float = MIN_GAP):
    """Next speed ``clamp(min(v + a dt, v_safe, maxSpeed), 0, inf)``."""
    v = np.minimum(np.minimum(np.asarray(speed, dtype=np.float64) + accel * dt,
                              safe_speed(gap, v_leader, decel, headway, min_gap)), max_speed)
    return np.maximum(v, 0.0)


def longitudinal_update(vehicle: Vehicle, leader_gap: float, leader_speed: float, dt: float,
                        ring_length: float = 1000.0) -> tuple[float, float]:
    """New ``(speed, position)`` of a single vehicle behind a leader at ``leader_gap``."""
    if leader_gap < 0:
        raise ValueError(f"leader gap must be non-negative, got {leader_gap}")
    d = vehicle.driver
    v = float(krauss_speed(vehicle.speed, d.max_speed, leader_gap, leader_speed, dt, d.accel, d.decel,
                           d.headway, d.min_gap))
    p = vehicle.position + v * dt
    if p >= ring_length:
        p -= ring_length
    return v, p


class CapacityError(ValueError):
    """Raised when a scenario cannot place all vehicles without overlap."""


class HighwaySim:
    """Ring-road traffic with one agent-controlled ego vehicle (index 0)."""

    def __init__(self, config: ScenarioConfig, road: RingRoad | None = None,
                 lc_params: LaneChangeParams | None = None, backend: str | None = None,
                 record: bool = False, d_max: float = D_MAX):
        self.config = config
        self.road = road if road is not None else RingRoad(lanes=config.lanes)
        if self.road.lanes != config.lanes:
            raise ValueError("road lane count differs from the scenario")
        self.lc = lc_params if lc_params is not None else LaneChangeParams()
        _kernels.get_backend(backend)
        self.backend = backend if backend is not None else _kernels.BACKEND
        self.d_max = d_max
        self.record = record
        self.trajectory: list[tuple[int, int, float, int, float]] = []
        self._spawn()

    @property
    def kernels(self):
        return _kernels.get_backend(self.backend)

    # ------------------------------------------------------------- spawning
    def _spawn(self) -> None:
        cfg, road = self.config, self.road
        n = cfg.n_vehicles + 1
        if cfg.n_vehicles < 0:
            raise ValueError("n_vehicles must be non-negative")
        if n > road.capacity():
            raise CapacityError(f"{cfg.n_vehicles} vehicles plus ego exceed the capacity "
                                f"{road.capacity()} of a {road.lanes}-lane {road.length} m ring")
        rng = np.random.default_rng(cfg.seed)
        per_lane = int(road.length // (VEHICLE_LENGTH + MIN_GAP))
        spacing = road.length / per_lane
        slots = rng.choice(road.lanes * per_lane, size=n, replace=False)
        offsets = rng.uniform(0.0, spacing, size=road.lanes)
        lanes = slots // per_lane
        pos = (slots % per_lane) * spacing + offsets[lanes]
        pos = np.where(pos >= road.length, pos - road.length, pos)
        pool = sample_driver_pool(cfg.driver_pool_seed)
        picks = rng.integers(0, len(pool), size=n - 1)
        self.drivers = [EGO_DRIVER] + [pool[int(k)] for k in picks]
        self.pos = pos.astype(np.float64)
        self.lane = lanes.astype(np.int64)
        self.target = self.lane.copy()
        self.lo = self.lane.copy()
        self.hi = self.lane.copy()
        self.elapsed = np.zeros(n)
        self.speed = np.zeros(n)
        self.vmax = np.array([d.max_speed for d in self.drivers])
        self.gain = np.array([d.lc_speed_gain for d in self.drivers])
        self.coop = np.array([d.lc_cooperative for d in self.drivers])
        self.rng = rng
        self.time = 0.0
        self.sim_steps = 0
        self.agent_steps = 0
        self.lane_changes = 0

    # ---------------------------------------------------------- observation
    @property
    def n(self) -> int:
        return len(self.pos)

    @property
    def done(self) -> bool:
        return self.agent_steps >= self.config.episode_length

    def observed_lanes(self) -> np.ndarray:
        """Lane used for perception: the target lane once a change is half done."""
        crossed = (self.lo != self.hi) & (self.elapsed >= 0.5 * self.road.lane_change_duration)
        return np.where(crossed, self.target, self.lane)

    def scene(self) -> Scene:
        return Scene(self.pos.copy(), self.observed_lanes(), self.speed.copy(), self.road.length,
                     self.road.lanes, np.arange(self.n))

    def observe(self) -> Observation:
        return extract_features(self.scene(), 0, self.d_max, V_DESIRED)

    def vehicle(self, i: int) -> Vehicle:
        change = None
        if self.lo[i] != self.hi[i]:
            change = (int(self.target[i]), float(self.elapsed[i]))
        return Vehicle(i, float(self.pos[i]), int(self.lane[i]), float(self.speed[i]), self.drivers[i],
                       lane_change=change)

    def mid_change(self, i: int = 0) -> bool:
        return bool(self.lo[i] != self.hi[i])

    # --------------------------------------------------------------- safety
    def neighbors(self, i: int, lane: int):
        return self.kernels.lane_neighbors(self.pos, self.lo, self.hi, self.road.length, VEHICLE_LENGTH,
                                           i, lane)

    def safety_check(self, action: int) -> int:
        """Effective ego action: unsafe or impossible lane changes become KEEP."""
        if action not in ACTIONS:
            raise ValueError(f"invalid action {action!r}")
        if action == KEEP or self.mid_change(0):
            return KEEP
        target = int(self.lane[0]) + (-1 if action == LEFT else 1)
        if target < 0 or target >= self.road.lanes:
            return KEEP
        leader, lgap, follower, fgap = self.neighbors(0, target)
        ego = self.drivers[0]
        if leader >= 0 and lgap < ego.min_gap + self.speed[0] * ego.headway:
            return KEEP
        if follower >= 0 and fgap < ego.min_gap + self.speed[follower] * ego.headway:
            return KEEP
        return action

    def safe_actions(self) -> list[int]:
        return [a for a in ACTIONS if self.safety_check(a) == a]

    def rule_based_action(self) -> int:
        """Action the rule-based heuristic would take for the ego."""
        if self.mid_change(0):
            return KEEP
        lane = self.kernels.rule_based_choice(
            0, self.pos, self.speed, self.lane, self.lo, self.hi, self.vmax, self.road.length,
            VEHICLE_LENGTH, self.road.lanes, MIN_GAP, HEADWAY, EGO_DRIVER.lc_speed_gain, 0.0, 1.0,
            self.lc.gain_scale, self.lc.lookahead, self.lc.coop_range, self.lc.coop_margin)
        if lane == self.lane[0]:
            return KEEP
        return LEFT if lane < self.lane[0] else RIGHT

    # ------------------------------------------------------------- dynamics
    def _start_change(self, i: int, target: int) -> None:
        self.target[i] = target
        self.lo[i] = min(self.lane[i], target)
        self.hi[i] = max(self.lane[i], target)
        self.elapsed[i] = 0.0

    def sim_step(self) -> None:
        """Advance every vehicle by one time step ``dt``."""
        road = self.road
        dt = road.dt
        done = (self.lo != self.hi) & (self.elapsed >= road.lane_change_duration - 1e-9)
        if done.any():
            self.lane[done] = self.target[done]
            self.lo[done] = self.target[done]
            self.hi[done] = self.target[done]
            self.elapsed[done] = 0.0
        uniforms = self.rng.random(self.n)
        self.lane_changes += self.kernels.rule_based_decisions(
            self.pos, self.speed, self.lane, self.lo, self.hi, self.target, self.elapsed, self.vmax,
            self.gain, self.coop, uniforms, 1, road.length, VEHICLE_LENGTH, road.lanes, MIN_GAP,
            HEADWAY, self.lc.gain_scale, self.lc.lookahead, self.lc.coop_range, self.lc.coop_margin)
        lead_lo, gap_lo, lead_hi, gap_hi = self.kernels.lane_leaders(
            self.pos, self.lo, self.hi, road.length, VEHICLE_LENGTH)
        v_new = self.speed + ACCEL * dt
        v_new = np.minimum(v_new, self.vmax)
        for lead, gap in ((lead_lo, gap_lo), (lead_hi, gap_hi)):
            v_lead = np.where(lead >= 0, self.speed[lead], 0.0)
            v_new = np.minimum(v_new, safe_speed(gap, v_lead))
        v_new = np.maximum(v_new, 0.0)
        v_new = self._no_overlap(v_new, (lead_lo, gap_lo), (lead_hi, gap_hi), dt=dt)
        self.speed = v_new
        pos = self.pos + v_new * dt
        self.pos = np.where(pos >= road.length, pos - road.length, pos)
        changing = self.lo != self.hi
        self.elapsed[changing] += dt
        self.time += dt
        self.sim_steps += 1
        if self.record:
            lanes = self.observed_lanes()
            for i in range(self.n):
                self.trajectory.append((self.sim_steps, i, float(self.pos[i]), int(lanes[i]),
                                        float(self.speed[i])))

    @staticmethod
    def _no_overlap(v_new, *leaders, dt):
        """Cap speeds so no follower can reach its leader's rear within the step.

        Iterates ``v_i <= (gap_i - eps) / dt + v_leader`` to its fixed point
        (at most n rounds, since every cycle of gaps is positive).
        """
        for _ in range(len(v_new) + 1):
            cap = np.full(len(v_new), np.inf)
            for lead, gap in leaders:
                has = lead >= 0
                bound = np.where(has, (gap - OVERLAP_EPS) / dt + v_new[lead], np.inf)
                cap = np.minimum(cap, bound)
            capped = np.minimum(v_new, np.maximum(cap, 0.0))
            if np.array_equal(capped, v_new):
                break
            v_new = capped
        return v_new

    def step(self, action: int) -> tuple[Observation, float, dict]:
        """Apply one agent action (2 s) and return ``(observation, reward, info)``.

        The reward is computed for the chosen action, before the safety
        module may have replaced it with KEEP.
        """
        effective = self.safety_check(action)
        if effective != KEEP:
            self._start_change(0, int(self.lane[0]) + (-1 if effective == LEFT else 1))
        for _ in range(self.road.steps_per_action):
            self.sim_step()
        self.agent_steps += 1
        r = reward(float(self.speed[0]), V_DESIRED, action)
        return self.observe(), r, {"effective_action": effective}

    # ------------------------------------------------------------ invariants
    def min_same_lane_gap(self) -> float:
        """Smallest bumper-to-bumper gap between consecutive occupants of any lane."""
        worst = np.inf
        for lane in range(self.road.lanes):
            idx = np.flatnonzero((self.lo <= lane) & (self.hi >= lane))
            if len(idx) < 2:
                continue
            p = np.sort(self.pos[idx])
            gaps = np.diff(np.append(p, p[0] + self.road.length)) - VEHICLE_LENGTH
            worst = min(worst, float(gaps.min()))
        return worst

    def dump_trajectory(self, path: str | Path) -> None:
        """Write recorded sim steps as CSV with columns step, vehicle_id, p, lane, v."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "vehicle_id", "p", "lane", "v"])
            for row in self.trajectory:
                writer.writerow([row[0], row[1], repr(row[2]), row[3], repr(row[4])])
