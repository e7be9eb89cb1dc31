"""Deterministic world advancement: action mapping, PID tracking, kinematic
bicycle dynamics, collision and failure detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InputDomainError
from .geometry import (
    CachedPolyline,
    PolygonTester,
    normalize_angle,
    point_in_polygon,
    rectangle_corners,
    rectangles_overlap,
)

SPEED_MAX = 6.0
STEER_MAX = math.pi / 4.0

OFF_ZONE = "off_zone"
OFF_PATH = "off_path"
COLLISION = "collision"
FAILURE_CAUSES = (COLLISION, OFF_ZONE, OFF_PATH)


@dataclass
class VehicleState:
    """Pose, speed and footprint of one agent at one tick.

    `svo` is the agent's ground-truth social value orientation; observers
    only see it when the observation mode exposes it.
    """

    position: np.ndarray
    heading: float
    speed: float
    length: float
    width: float
    agent_id: int
    svo: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if not (0.0 <= self.speed <= SPEED_MAX):
            raise InputDomainError(f"speed {self.speed} outside [0, {SPEED_MAX}]")
        if self.length <= 0.0 or self.width <= 0.0:
            raise InputDomainError("vehicle footprint must have positive size")
        if not (0.0 <= self.svo <= 1.0):
            raise InputDomainError(f"svo {self.svo} outside [0, 1]")
        self.heading = normalize_angle(self.heading)

    @property
    def wheelbase(self) -> float:
        return 0.8 * self.length

    def corners(self) -> np.ndarray:
        return rectangle_corners(self.position, self.heading, self.length, self.width)


@dataclass(frozen=True)
class ControlSetpoint:
    target_speed: float
    steering_angle: float

    def __post_init__(self):
        if not (0.0 <= self.target_speed <= SPEED_MAX):
            raise InputDomainError(f"target speed {self.target_speed} outside [0, {SPEED_MAX}]")
        if not (-STEER_MAX <= self.steering_angle <= STEER_MAX):
            raise InputDomainError(f"steering {self.steering_angle} outside [-pi/4, pi/4]")


def map_action(a) -> ControlSetpoint:
    """Affine map from a normalized action in [-1, 1]^2 to a setpoint."""
    a0, a1 = float(a[0]), float(a[1])
    if not (-1.0 <= a0 <= 1.0 and -1.0 <= a1 <= 1.0):
        raise InputDomainError(f"action {a!r} outside [-1, 1]^2")
    return ControlSetpoint(target_speed=3.0 * (a0 + 1.0), steering_angle=STEER_MAX * a1)


def unmap_action(setpoint: ControlSetpoint) -> np.ndarray:
    """Inverse of map_action."""
    return np.array([setpoint.target_speed / 3.0 - 1.0, setpoint.steering_angle / STEER_MAX])


@dataclass(frozen=True)
class PidConfig:
    kp: float = 2.0
    ki: float = 0.1
    kd: float = 0.0
    a_max: float = 3.0
    integral_limit: float = 5.0


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float | None = None


def pid_step(
    state: VehicleState,
    setpoint: ControlSetpoint,
    controller: PidState,
    dt: float,
    cfg: PidConfig = PidConfig(),
) -> tuple[float, float, PidState]:
    """One PID update of the speed loop; steering passes straight through."""
    error = setpoint.target_speed - state.speed
    integral = controller.integral + error * dt
    integral = min(max(integral, -cfg.integral_limit), cfg.integral_limit)
    derivative = 0.0 if controller.prev_error is None else (error - controller.prev_error) / dt
    accel = cfg.kp * error + cfg.ki * integral + cfg.kd * derivative
    accel = min(max(accel, -cfg.a_max), cfg.a_max)
    return accel, setpoint.steering_angle, PidState(integral=integral, prev_error=error)


def bicycle_step(state: VehicleState, acceleration: float, steering: float, dt: float) -> VehicleState:
    """Kinematic bicycle update about the rear axle."""
    if dt <= 0.0:
        raise InputDomainError("dt must be positive")
    if not (-STEER_MAX <= steering <= STEER_MAX):
        raise InputDomainError(f"steering {steering} outside [-pi/4, pi/4]")
    v = state.speed
    x = state.position[0] + v * math.cos(state.heading) * dt
    y = state.position[1] + v * math.sin(state.heading) * dt
    heading = normalize_angle(state.heading + (v / state.wheelbase) * math.tan(steering) * dt)
    speed = min(max(v + acceleration * dt, 0.0), SPEED_MAX)
    return replace(state, position=np.array([x, y]), heading=heading, speed=speed)


def detect_collisions(vehicles) -> set[tuple[int, int]]:
    """Unordered agent-id pairs whose oriented rectangles overlap."""
    out: set[tuple[int, int]] = set()
    states = list(vehicles)
    n = len(states)
    if n < 2:
        return out
    pos = np.array([v.position for v in states])
    radii = np.array([0.5 * math.hypot(v.length, v.width) for v in states])
    delta = pos[:, None, :] - pos[None, :, :]
    d2 = np.sum(delta * delta, axis=2)
    reach = radii[:, None] + radii[None, :]
    ii, jj = np.nonzero(np.triu(d2 <= reach * reach, k=1))
    corners: dict[int, np.ndarray] = {}
    for i, j in zip(ii, jj):
        if i not in corners:
            corners[i] = states[i].corners()
        if j not in corners:
            corners[j] = states[j].corners()
        if rectangles_overlap(corners[i], corners[j]):
            a, b = states[i].agent_id, states[j].agent_id
            out.add((min(a, b), max(a, b)))
    return out


def check_failures(
    vehicle: VehicleState,
    drivable_zone: np.ndarray,
    path: CachedPolyline,
    d_path: float = 4.0,
) -> str | None:
    """First triggered of off_zone / off_path; collisions are detected separately."""
    if not point_in_polygon(vehicle.position, drivable_zone):
        return OFF_ZONE
    _, lateral = path.project(vehicle.position)
    if lateral > d_path:
        return OFF_PATH
    return None


@dataclass
class AgentStatus:
    alive: bool = True
    removed: bool = False
    success: bool = False
    failure_cause: str | None = None
    end_tick: int | None = None


@dataclass
class World:
    """Single-writer world state; one `step` call at a time.

    Failed agents freeze in place and stay collision obstacles; successful
    agents leave the map and are removed.
    """

    network: "RoadNetwork"
    vehicles: list[VehicleState]
    path_ids: list[int]
    dt: float = 0.1
    seed: int = 0
    d_path: float = 4.0
    pid_cfg: PidConfig = field(default_factory=PidConfig)
    success_margin: float = 0.5
    tick: int = 0

    def __post_init__(self):
        n = len(self.vehicles)
        if len(self.path_ids) != n:
            raise InputDomainError("one path id per vehicle required")
        self.status = {v.agent_id: AgentStatus() for v in self.vehicles}
        self._pid = {v.agent_id: PidState() for v in self.vehicles}
        self._paths = {v.agent_id: self.network.route_cache(pid) for v, pid in zip(self.vehicles, self.path_ids)}
        self._zone_tester = PolygonTester(self.network.drivable_zone)
        self._path_id = dict(zip((v.agent_id for v in self.vehicles), self.path_ids))
        self.history: dict[int, list[tuple[float, float, float, float]]] = {
            v.agent_id: [(v.position[0], v.position[1], v.heading, v.speed)] for v in self.vehicles
        }

    # -- queries -------------------------------------------------------

    def vehicle(self, agent_id: int) -> VehicleState:
        return next(v for v in self.vehicles if v.agent_id == agent_id)

    def alive_ids(self) -> list[int]:
        return [v.agent_id for v in self.vehicles if self.status[v.agent_id].alive]

    def present_vehicles(self) -> list[VehicleState]:
        """Vehicles physically on the map (alive or frozen after a failure)."""
        return [v for v in self.vehicles if not self.status[v.agent_id].removed]

    def path_of(self, agent_id: int) -> CachedPolyline:
        return self._paths[agent_id]

    def path_id_of(self, agent_id: int) -> int:
        return self._path_id[agent_id]

    def history_block(self, horizon: int) -> tuple[list[int], np.ndarray]:
        """Present agents' trailing poses as one dense (n, h, 4) block.

        All present agents share a history length, so the block is exact.
        Cached per (tick, horizon)."""
        key = (self.tick, horizon)
        cached = getattr(self, "_history_block", None)
        if cached is not None and cached[0] == key:
            return cached[1], cached[2]
        ids = [v.agent_id for v in self.present_vehicles()]
        block = np.array([self.history[a][-horizon:] for a in ids], dtype=float)
        self._history_block = (key, ids, block)
        return ids, block

    # -- advancement ---------------------------------------------------

    def step(self, setpoints: dict[int, ControlSetpoint]) -> dict[int, str]:
        """Advance one tick; returns newly terminated agents -> outcome.

        Outcome is "success" or a failure cause. All alive agents move
        simultaneously from the current state.
        """
        moving = [v for v in self.vehicles if self.status[v.agent_id].alive]
        updated: dict[int, VehicleState] = {}
        for v in moving:
            sp = setpoints[v.agent_id]
            accel, steer, pid = pid_step(v, sp, self._pid[v.agent_id], self.dt, self.pid_cfg)
            self._pid[v.agent_id] = pid
            updated[v.agent_id] = bicycle_step(v, accel, steer, self.dt)
        self.vehicles = [updated.get(v.agent_id, v) for v in self.vehicles]
        self.tick += 1
        # Post-move speeds, kept before any crash freeze zeroes them; the
        # reward for a crash tick still pays the speed actually driven.
        self.last_speeds = {v.agent_id: v.speed for v in self.vehicles}

        events: dict[int, str] = {}
        alive_list = self.alive_ids()
        alive = set(alive_list)

        # One batched path projection per route feeds both the success check
        # and the lateral-deviation failure below.
        proj: dict[int, tuple[float, float]] = {}
        by_path: dict[int, list[int]] = {}
        for v in self.vehicles:
            if v.agent_id in alive:
                by_path.setdefault(self.path_id_of(v.agent_id), []).append(v.agent_id)
        for pid, ids in by_path.items():
            path = self.network.route_cache(pid)
            pos = np.array([self.vehicle(a).position for a in ids])
            s_arr, lat_arr = path.project_many(pos)
            for a, s, lat in zip(ids, s_arr, lat_arr):
                proj[a] = (float(s), float(lat))
                # Success first: an agent that reached the end of its path
                # exits cleanly instead of tripping the zone edge.
                if s >= path.length - self.success_margin:
                    events[a] = "success"

        pairs = detect_collisions(
            v for v in self.present_vehicles() if events.get(v.agent_id) != "success"
        )
        for a, b in pairs:
            for agent_id in (a, b):
                if agent_id in alive and agent_id not in events:
                    events[agent_id] = COLLISION

        pending = [a for a in alive_list if a not in events]
        if pending:
            inside = self._zone_tester.contains_many(
                np.array([self.vehicle(a).position for a in pending])
            )
            for a, ok in zip(pending, inside):
                if not ok:
                    events[a] = OFF_ZONE
                elif proj[a][1] > self.d_path:
                    events[a] = OFF_PATH

        for agent_id, outcome in events.items():
            st = self.status[agent_id]
            st.alive = False
            st.end_tick = self.tick
            if outcome == "success":
                st.success = True
                st.removed = True
            else:
                st.failure_cause = outcome
                veh = self.vehicle(agent_id)
                veh.speed = 0.0

        for v in self.vehicles:
            if not self.status[v.agent_id].removed:
                self.history[v.agent_id].append((v.position[0], v.position[1], v.heading, v.speed))
        return events
