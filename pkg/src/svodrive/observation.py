"""Vectorized polyline observations: static map sets, vehicle trajectory sets,
and per-agent partial views filtered by distance.

Elements hold dense arrays internally (the per-tick hot path); the
PointFeature view materializes on demand for structural inspection.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StructuralError
from .geometry import normalize_angles, to_frame
from .roads import RoadNetwork
from .simcore import World

VEHICLE = "vehicle"

DEFAULT_RADIUS = 30.0
DEFAULT_MAX_NEIGHBORS = 8
DEFAULT_HORIZON = 10
DEFAULT_STATIC_CROP = 60.0
DEFAULT_SPACING = 2.0


@dataclass(frozen=True)
class PointFeature:
    """One vectorized point: pose, optional speed, kind-dependent aux slot.

    aux carries the lane width for static points; for vehicle points it is
    the SVO when the observation exposes it, else None.
    """

    x: float
    y: float
    heading: float
    speed: float | None
    aux: float | None
    element_index: int
    point_index: int


@dataclass
class PolylineElement:
    """A static polyline or one agent's recent trajectory, ego-framed.

    base rows are (x, y, heading); speeds exist for vehicle elements only.
    aux is one value for the whole element (lane width / exposed SVO).
    """

    kind: str
    base: np.ndarray
    speeds: np.ndarray | None
    aux: float | None
    element_index: int
    agent_id: int | None = None

    def __len__(self) -> int:
        return len(self.base)

    @property
    def xy(self) -> np.ndarray:
        return self.base[:, :2]

    @property
    def points(self) -> list[PointFeature]:
        n = len(self.base)
        return [
            PointFeature(
                x=float(self.base[j, 0]),
                y=float(self.base[j, 1]),
                heading=float(self.base[j, 2]),
                speed=None if self.speeds is None else float(self.speeds[j]),
                aux=self.aux,
                element_index=self.element_index,
                point_index=j,
            )
            for j in range(n)
        ]

    def last(self) -> PointFeature:
        return self.points[-1]

    def last_pose(self) -> tuple[float, float, float]:
        return float(self.base[-1, 0]), float(self.base[-1, 1]), float(self.base[-1, 2])

    def last_speed(self) -> float:
        return float(self.speeds[-1])


@dataclass
class Observation:
    """Partial, ego-framed view of the world for one agent."""

    agent_id: int
    ego: PolylineElement
    others: list[PolylineElement]
    static: list[PolylineElement]
    with_svo: bool
    ego_route_index: int | None = None
    tick: int = 0

    def neighbor_ids(self) -> list[int]:
        return [e.agent_id for e in self.others]

    def neighbor_svos(self) -> list[float]:
        if not self.with_svo:
            raise StructuralError("observation does not expose SVOs")
        return [e.aux for e in self.others]


@dataclass(frozen=True)
class ObservationConfig:
    radius: float = DEFAULT_RADIUS
    max_neighbors: int = DEFAULT_MAX_NEIGHBORS
    horizon: int = DEFAULT_HORIZON
    static_crop: float = DEFAULT_STATIC_CROP
    spacing: float = DEFAULT_SPACING


class _StaticPack:
    """All static polylines of a network flattened for fast cropping."""

    def __init__(self, network: RoadNetwork, spacing: float):
        pts, meta = [], []
        self.kinds: list[str] = []
        self.widths: list[float] = []
        self.route_positions: dict[int, int] = {}
        polys = network.resampled_static(spacing)
        route_seen = 0
        for ei, poly in enumerate(polys):
            self.kinds.append(poly.kind)
            self.widths.append(poly.lane_width)
            if poly.kind == "route":
                self.route_positions[route_seen] = ei
                route_seen += 1
            pts.append(poly.points)
            meta.append(np.full(len(poly.points), ei))
        self.points = np.vstack(pts)
        self.element_ids = np.concatenate(meta).astype(np.int64)


def _static_pack(network: RoadNetwork, spacing: float) -> _StaticPack:
    cache = getattr(network, "_obs_packs", None)
    if cache is None:
        cache = {}
        network._obs_packs = cache
    if spacing not in cache:
        cache[spacing] = _StaticPack(network, spacing)
    return cache[spacing]


def vectorize_static(
    network: RoadNetwork,
    ego_pose: tuple[float, float, float],
    crop_radius: float = DEFAULT_STATIC_CROP,
    spacing: float = DEFAULT_SPACING,
    ego_route: int | None = None,
    first_element_index: int = 0,
) -> tuple[list[PolylineElement], int | None]:
    """Static polylines in the ego frame, cropped to a radius.

    Returns (elements, position of the ego's route element or None).
    """
    ex, ey, eh = ego_pose
    pack = _static_pack(network, spacing)
    dx = pack.points[:, 0] - ex
    dy = pack.points[:, 1] - ey
    keep = dx * dx + dy * dy <= crop_radius * crop_radius
    if not np.any(keep):
        return [], None
    kept = np.flatnonzero(keep)
    dx, dy = dx[kept], dy[kept]
    c, s = np.cos(eh), np.sin(eh)
    base_all = np.empty((len(kept), 3))
    base_all[:, 0] = dx * c + dy * s
    base_all[:, 1] = -dx * s + dy * c
    base_all[:, 2] = normalize_angles(pack.points[kept, 2] - eh)
    elem_ids = pack.element_ids[kept]

    elements: list[PolylineElement] = []
    route_elem_index = None
    # element ids are nondecreasing in pack order; split on the boundaries
    bounds = np.flatnonzero(np.diff(elem_ids)) + 1
    starts = np.concatenate([[0], bounds])
    stops = np.concatenate([bounds, [len(elem_ids)]])
    for a, b in zip(starts, stops):
        ei = int(elem_ids[a])
        if ego_route is not None and pack.route_positions.get(ego_route) == ei:
            route_elem_index = len(elements)
        elements.append(
            PolylineElement(
                kind=pack.kinds[ei],
                base=base_all[a:b],
                speeds=None,
                aux=pack.widths[ei],
                element_index=first_element_index + len(elements),
            )
        )
    return elements, route_elem_index


def vectorize_vehicles(
    history: dict[int, list[tuple[float, float, float, float]]],
    agent_ids: list[int],
    ego_pose: tuple[float, float, float],
    horizon: int = DEFAULT_HORIZON,
    expose_svo: bool = False,
    svos: dict[int, float] | None = None,
    first_element_index: int = 0,
) -> list[PolylineElement]:
    """Vehicle trajectory elements in the ego frame, oldest point first.

    Each element holds the most recent min(horizon, available) poses.
    """
    ex, ey, eh = ego_pose
    origin = np.array([ex, ey])
    elements = []
    for offset, agent_id in enumerate(agent_ids):
        track = history[agent_id]
        if not track:
            raise StructuralError(f"agent {agent_id} has empty history")
        arr = np.asarray(track[-horizon:], dtype=float)
        local_xy = to_frame(arr[:, :2], origin, eh)
        local_h = normalize_angles(arr[:, 2] - eh)
        aux = None
        if expose_svo:
            if svos is None or agent_id not in svos:
                raise StructuralError("expose_svo requires svo values per agent")
            aux = float(svos[agent_id])
        elements.append(
            PolylineElement(
                kind=VEHICLE,
                base=np.column_stack([local_xy, local_h]),
                speeds=arr[:, 3].copy(),
                aux=aux,
                element_index=first_element_index + offset,
                agent_id=agent_id,
            )
        )
    return elements


def observe(
    world: World,
    agent_id: int,
    cfg: ObservationConfig = ObservationConfig(),
    expose_svo: bool = False,
) -> Observation:
    """Ego-framed partial observation: up to M nearest agents within the
    interaction radius (closed ball, ties broken by agent id), plus the
    cropped static map."""
    ego_state = world.vehicle(agent_id)
    ego_pose = (float(ego_state.position[0]), float(ego_state.position[1]), ego_state.heading)

    block_ids, block = world.history_block(cfg.horizon)
    row_of = {aid: i for i, aid in enumerate(block_ids)}
    ego_row = row_of[agent_id]
    current = block[:, -1, :2]
    dist = np.hypot(current[:, 0] - ego_pose[0], current[:, 1] - ego_pose[1])
    dist[ego_row] = np.inf
    ids_arr = np.asarray(block_ids)
    order = np.lexsort((ids_arr, dist))
    in_range = dist[order] <= cfg.radius
    neighbor_rows = order[in_range][: cfg.max_neighbors]
    neighbor_ids = [int(ids_arr[r]) for r in neighbor_rows]

    svos = {v.agent_id: v.svo for v in world.vehicles} if expose_svo else None
    sub = block[np.concatenate([[ego_row], neighbor_rows]).astype(np.int64)]
    wanted = [agent_id] + neighbor_ids
    ex, ey, eh = ego_pose
    c, s = np.cos(eh), np.sin(eh)
    dx = sub[:, :, 0] - ex
    dy = sub[:, :, 1] - ey
    base_all = np.stack(
        [dx * c + dy * s, -dx * s + dy * c, normalize_angles(sub[:, :, 2] - eh)], axis=2
    )
    vehicle_elems = [
        PolylineElement(
            kind=VEHICLE,
            base=base_all[i],
            speeds=sub[i, :, 3],
            aux=(svos[a] if expose_svo else None),
            element_index=i,
            agent_id=a,
        )
        for i, a in enumerate(wanted)
    ]
    ego_elem, others = vehicle_elems[0], vehicle_elems[1:]
    static, route_idx = vectorize_static(
        world.network,
        ego_pose,
        cfg.static_crop,
        cfg.spacing,
        ego_route=world.path_id_of(agent_id),
        first_element_index=1 + len(others),
    )
    return Observation(
        agent_id=agent_id,
        ego=ego_elem,
        others=others,
        static=static,
        with_svo=expose_svo,
        ego_route_index=route_idx,
        tick=world.tick,
    )
