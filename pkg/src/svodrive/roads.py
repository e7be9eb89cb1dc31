"""Road network container: polylines, drivable zone, global paths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .geometry import CachedPolyline, point_in_polygon, resample_polyline

CENTERLINE = "centerline"
SIDELINE = "sideline"
ROUTE = "route"
STATIC_KINDS = (CENTERLINE, SIDELINE, ROUTE)


@dataclass
class Polyline:
    """A map polyline: (N, 3) rows of (x, y, heading) plus a lane width."""

    kind: str
    points: np.ndarray
    lane_width: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ConfigError("polyline points must be (N, 3) of x, y, heading")
        if len(self.points) < 2:
            raise ConfigError("polyline needs at least 2 points")
        if self.lane_width <= 0.0:
            raise ConfigError("lane width must be positive")

    @property
    def xy(self) -> np.ndarray:
        return self.points[:, :2]


@dataclass
class RoadNetwork:
    """Static road description plus the family of global paths.

    `routes[k]` is the global path assigned to any agent with path id k.
    """

    centerlines: list[Polyline]
    sidelines: list[Polyline]
    routes: list[Polyline]
    drivable_zone: np.ndarray
    name: str = "road"
    _route_caches: dict[int, CachedPolyline] = field(default_factory=dict, repr=False)
    _static_cache: dict[float, list[Polyline]] = field(default_factory=dict, repr=False)

    def route_cache(self, path_id: int) -> CachedPolyline:
        if path_id not in self._route_caches:
            self._route_caches[path_id] = CachedPolyline(self.routes[path_id].xy)
        return self._route_caches[path_id]

    def static_polylines(self) -> list[Polyline]:
        return list(self.centerlines) + list(self.sidelines) + list(self.routes)

    def resampled_static(self, spacing: float) -> list[Polyline]:
        """Static polylines resampled at fixed spacing (cached per spacing)."""
        if spacing not in self._static_cache:
            self._static_cache[spacing] = [
                Polyline(p.kind, resample_polyline(p.xy, spacing), p.lane_width)
                for p in self.static_polylines()
            ]
        return self._static_cache[spacing]


def validate_network(network: RoadNetwork, sample_spacing: float = 2.0) -> None:
    """Check the structural invariants; raises ConfigError on violation."""
    if len(network.drivable_zone) < 3:
        raise ConfigError("drivable zone must be a polygon")
    for group, kind in (
        (network.centerlines, CENTERLINE),
        (network.sidelines, SIDELINE),
        (network.routes, ROUTE),
    ):
        for p in group:
            if p.kind != kind:
                raise ConfigError(f"{kind} polyline tagged as {p.kind}")
            if len(p.points) < 2:
                raise ConfigError("polyline with fewer than 2 points")
    if not network.routes:
        raise ConfigError("network has no global paths")
    # Boundary-tolerant containment: route endpoints sit exactly on the
    # zone edge, where the ray cast is ambiguous.
    ring = CachedPolyline(np.vstack([network.drivable_zone, network.drivable_zone[:1]]))
    for k, route in enumerate(network.routes):
        samples = resample_polyline(route.xy, sample_spacing)
        for x, y, _ in samples:
            p = np.array([x, y])
            if not point_in_polygon(p, network.drivable_zone) and ring.project(p)[1] > 1e-6:
                raise ConfigError(f"route {k} leaves the drivable zone at ({x:.2f}, {y:.2f})")
