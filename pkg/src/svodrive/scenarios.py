"""Parametric bottleneck / merge road construction and randomized spawning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SpawnError
from .geometry import rectangle_corners, rectangles_overlap, resample_polyline
from .roads import CENTERLINE, ROUTE, SIDELINE, Polyline, RoadNetwork, validate_network
from .simcore import VehicleState, detect_collisions

BOTTLENECK = "bottleneck"
MERGE = "merge"


@dataclass(frozen=True)
class SvoSpec:
    """How ground-truth SVOs are drawn: uniform01, fixed(value) or a list."""

    dist: str = "uniform01"
    value: float = 0.5
    values: tuple[float, ...] = ()

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.dist == "uniform01":
            return rng.uniform(0.0, 1.0, size=n)
        if self.dist == "fixed":
            return np.full(n, float(self.value))
        if self.dist == "list":
            if not self.values:
                raise ConfigError("svo list distribution needs values")
            return np.array([self.values[i % len(self.values)] for i in range(n)], dtype=float)
        raise ConfigError(f"unknown svo distribution {self.dist!r}")


@dataclass
class ScenarioSpec:
    kind: str = MERGE
    lane_width: float = 3.5
    # bottleneck geometry
    approach_lanes: int = 3
    approach_len: float = 60.0
    throat_lanes: int = 1
    throat_len: float = 20.0
    taper_len: float = 12.0
    exit_len: float = 60.0
    # merge geometry
    main_lanes: int = 2
    main_len: float = 120.0
    ramp_len: float = 60.0
    merge_angle: float = math.radians(15.0)
    junction_x: float = 60.0
    blend_len: float = 6.0
    # agents
    agent_count: tuple[int, int] = (8, 20)
    svo: SvoSpec = field(default_factory=SvoSpec)
    seed: int = 0
    vehicle_length: float = 4.6
    vehicle_width: float = 2.0
    spawn_speed: float = 2.0
    spawn_margin: float = 2.0
    spawn_fraction: float = 0.9
    min_gap: float = 6.0

    def __post_init__(self):
        lo, hi = self.agent_count
        if not (1 <= lo <= hi <= 64):
            raise ConfigError(f"agent count range {self.agent_count} outside [1, 64]")
        if self.lane_width <= self.vehicle_width:
            raise ConfigError("lane width must exceed vehicle width")


def _lane_offsets(n_lanes: int, width: float) -> np.ndarray:
    return (np.arange(n_lanes) - (n_lanes - 1) / 2.0) * width


def _poly(kind: str, waypoints, width: float, spacing: float = 2.0) -> Polyline:
    return Polyline(kind, resample_polyline(np.asarray(waypoints, dtype=float), spacing), width)


def build_bottleneck(spec: ScenarioSpec) -> RoadNetwork:
    """Multi-lane approach narrowing to a throat, then re-expanding."""
    if spec.kind != BOTTLENECK:
        raise ConfigError(f"expected bottleneck spec, got {spec.kind!r}")
    if min(spec.approach_len, spec.throat_len, spec.taper_len, spec.exit_len) <= 0:
        raise ConfigError("bottleneck segment lengths must be positive")
    if spec.throat_lanes < 1 or spec.approach_lanes < spec.throat_lanes:
        raise ConfigError("need 1 <= throat lanes <= approach lanes")
    w = spec.lane_width
    na, nt = spec.approach_lanes, spec.throat_lanes
    x0 = spec.approach_len
    x1 = x0 + spec.taper_len
    x2 = x1 + spec.throat_len
    x3 = x2 + spec.taper_len
    x4 = x3 + spec.exit_len
    ya = _lane_offsets(na, w)
    yt = _lane_offsets(nt, w)

    centerlines = []
    for y in ya:
        centerlines.append(_poly(CENTERLINE, [(0, y), (x0, y)], w))
        centerlines.append(_poly(CENTERLINE, [(x3, y), (x4, y)], w))
    for y in yt:
        centerlines.append(_poly(CENTERLINE, [(x1, y), (x2, y)], w))

    top_a = na * w / 2.0
    top_t = nt * w / 2.0
    top = [(0, top_a), (x0, top_a), (x1, top_t), (x2, top_t), (x3, top_a), (x4, top_a)]
    bottom = [(x, -y) for x, y in top]
    sidelines = [_poly(SIDELINE, top, w), _poly(SIDELINE, bottom, w)]
    zone = np.array(top + bottom[::-1], dtype=float)

    routes = []
    for k, y in enumerate(ya):
        m = 0 if na == 1 else int(round(k * (nt - 1) / (na - 1)))
        ym = yt[m]
        routes.append(
            _poly(ROUTE, [(0, y), (x0, y), (x1, ym), (x2, ym), (x3, y), (x4, y)], w)
        )

    network = RoadNetwork(centerlines, sidelines, routes, zone, name=BOTTLENECK)
    validate_network(network)
    return network


def _quad_bezier(p0, p1, p2, n: int = 8) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    return (1 - t) ** 2 * p0 + 2 * t * (1 - t) * p1 + t**2 * p2


def build_merge(spec: ScenarioSpec) -> RoadNetwork:
    """A straight carriageway joined by an on-ramp at a fixed angle."""
    if spec.kind != MERGE:
        raise ConfigError(f"expected merge spec, got {spec.kind!r}")
    if not (0.0 < spec.merge_angle < math.pi / 2):
        raise ConfigError("merge angle must lie in (0, pi/2)")
    if spec.ramp_len <= spec.blend_len:
        raise ConfigError("ramp shorter than its junction blend")
    if not (spec.blend_len < spec.junction_x < spec.main_len - spec.blend_len):
        raise ConfigError("junction must lie strictly inside the main road")
    w = spec.lane_width
    nl = spec.main_lanes
    ys = _lane_offsets(nl, w)
    y_join = ys[0]  # ramp feeds the lowest lane
    alpha = spec.merge_angle
    u = np.array([math.cos(alpha), math.sin(alpha)])
    junction = np.array([spec.junction_x, y_join])
    ramp_start = junction - spec.ramp_len * u

    centerlines = [_poly(CENTERLINE, [(0, y), (spec.main_len, y)], w) for y in ys]
    centerlines.append(_poly(CENTERLINE, [ramp_start, junction], w))

    # Ramp route: straight, then a short tangential blend onto the lane.
    blend_from = junction - spec.blend_len * u
    blend_to = junction + np.array([spec.blend_len, 0.0])
    ramp_points = np.vstack(
        [
            [ramp_start],
            _quad_bezier(blend_from, junction, blend_to),
            [[spec.main_len, y_join]],
        ]
    )
    routes = [_poly(ROUTE, [(0, y), (spec.main_len, y)], w) for y in ys]
    routes.append(_poly(ROUTE, ramp_points, w))

    top = nl * w / 2.0
    bot = -top
    # Where the ramp corridor's edges open the main road's bottom edge.
    n_left = np.array([-math.sin(alpha), math.cos(alpha)]) * (w / 2.0)
    open_left_x = _x_at_y(ramp_start + n_left, u, bot)
    open_right_x = _x_at_y(ramp_start - n_left, u, bot)
    cap_left = ramp_start + n_left
    cap_right = ramp_start - n_left
    top_line = [(0.0, top), (spec.main_len, top)]
    sidelines = [
        _poly(SIDELINE, top_line, w),
        _poly(SIDELINE, [(0.0, bot), (open_left_x, bot)], w),
        _poly(SIDELINE, [(open_right_x, bot), (spec.main_len, bot)], w),
        _poly(SIDELINE, [cap_left, (open_left_x, bot)], w),
        _poly(SIDELINE, [cap_right, (open_right_x, bot)], w),
    ]
    zone = np.array(
        [
            (0.0, top),
            (spec.main_len, top),
            (spec.main_len, bot),
            (open_right_x, bot),
            tuple(cap_right),
            tuple(cap_left),
            (open_left_x, bot),
            (0.0, bot),
        ]
    )
    network = RoadNetwork(centerlines, sidelines, routes, zone, name=MERGE)
    validate_network(network)
    return network


def _x_at_y(point: np.ndarray, direction: np.ndarray, y: float) -> float:
    """x where the line (point + t * direction) crosses the horizontal y."""
    if direction[1] == 0.0:
        raise ConfigError("degenerate ramp direction")
    t = (y - point[1]) / direction[1]
    return float(point[0] + t * direction[0])


def build_network(spec: ScenarioSpec) -> RoadNetwork:
    if spec.kind == BOTTLENECK:
        return build_bottleneck(spec)
    if spec.kind == MERGE:
        return build_merge(spec)
    raise ConfigError(f"unknown scenario kind {spec.kind!r}")


@dataclass
class SpawnResult:
    vehicles: list[VehicleState]
    path_ids: list[int]


def _free_intervals(
    span: tuple[float, float], occupied: np.ndarray, spacing: float
) -> list[tuple[float, float]]:
    """Sub-intervals of span at least `spacing` away from every occupied s."""
    free = [span]
    for s in np.sort(occupied):
        blocked = (s - spacing, s + spacing)
        nxt: list[tuple[float, float]] = []
        for a, b in free:
            if blocked[1] <= a or blocked[0] >= b:
                nxt.append((a, b))
                continue
            if blocked[0] > a:
                nxt.append((a, blocked[0]))
            if blocked[1] < b:
                nxt.append((blocked[1], b))
        free = nxt
    return free


def spawn_agents(network: RoadNetwork, spec: ScenarioSpec, rng: np.random.Generator) -> SpawnResult:
    """Place n agents on random routes with a minimum initial bumper gap.

    Placement draws a route, then a position uniformly over the route's
    remaining free arc (positions on other routes block where the routes
    run close together, e.g. downstream of a merge junction).
    """
    lo, hi = spec.agent_count
    n = int(rng.integers(lo, hi + 1))
    svos = spec.svo.draw(rng, n)

    placed: list[VehicleState] = []
    path_ids: list[int] = []
    inflated: list[np.ndarray] = []
    pad_l = spec.vehicle_length + spec.min_gap
    pad_w = spec.vehicle_width + 0.5
    spacing = spec.vehicle_length + spec.min_gap
    lateral_block = spec.lane_width * 0.7
    for agent_id in range(n):
        ok = False
        for _ in range(1000):
            path_id = int(rng.integers(0, len(network.routes)))
            cache = network.route_cache(path_id)
            s_hi = max(cache.length * spec.spawn_fraction, spec.spawn_margin + 1.0)
            if placed:
                pos_all = np.array([v.position for v in placed])
                s_all, lat_all = cache.project_many(pos_all)
                occupied = s_all[lat_all < lateral_block]
            else:
                occupied = np.empty(0)
            free = _free_intervals((spec.spawn_margin, s_hi), occupied, spacing + 0.01)
            total = sum(b - a for a, b in free)
            if total <= 0.0:
                continue
            u = float(rng.uniform(0.0, total))
            s, lo_edge, hi_edge = free[-1][1], free[-1][0], free[-1][1]
            for a, b in free:
                if u <= b - a:
                    s, lo_edge, hi_edge = a + u, a, b
                    break
                u -= b - a
            # Half the time, park at the nearer interval edge: queued traffic
            # packs to capacity instead of fragmenting the road.
            if rng.uniform() < 0.5:
                s = lo_edge if (s - lo_edge) < (hi_edge - s) else hi_edge
            pos = cache.point_at(s)
            nxt = cache.point_at(min(s + 0.5, cache.length))
            heading = math.atan2(nxt[1] - pos[1], nxt[0] - pos[0])
            halo = rectangle_corners(pos, heading, pad_l, pad_w)
            if any(rectangles_overlap(halo, other) for other in inflated):
                continue
            placed.append(
                VehicleState(
                    position=pos,
                    heading=heading,
                    speed=spec.spawn_speed,
                    length=spec.vehicle_length,
                    width=spec.vehicle_width,
                    agent_id=agent_id,
                    svo=float(svos[agent_id]),
                )
            )
            path_ids.append(path_id)
            inflated.append(halo)
            ok = True
            break
        if not ok:
            raise SpawnError(
                f"placed only {len(placed)} of {n} agents without violating the spawn gap",
                placed=len(placed),
                requested=n,
            )
    if detect_collisions(placed):
        raise SpawnError("spawn produced overlapping footprints", placed=len(placed), requested=n)
    return SpawnResult(vehicles=placed, path_ids=path_ids)
