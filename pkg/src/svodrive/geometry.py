"""Planar geometry helpers: angles, frames, polylines, rectangles, polygons."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.remainder(theta, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    return a


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized wrap to (-pi, pi]."""
    a = np.remainder(np.asarray(theta, dtype=float) + math.pi, TWO_PI) - math.pi
    # np.remainder lands in [-pi, pi); flip the open end to match (-pi, pi].
    a = np.where(a == -math.pi, math.pi, a)
    return a


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def to_frame(points_xy: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """World -> local frame at (origin, heading). points_xy is (N, 2)."""
    rel = np.asarray(points_xy, dtype=float) - np.asarray(origin, dtype=float)
    c, s = math.cos(heading), math.sin(heading)
    x = rel[..., 0] * c + rel[..., 1] * s
    y = -rel[..., 0] * s + rel[..., 1] * c
    return np.stack([x, y], axis=-1)


def from_frame(points_xy: np.ndarray, origin: np.ndarray, heading: float) -> np.ndarray:
    """Local frame at (origin, heading) -> world."""
    p = np.asarray(points_xy, dtype=float)
    c, s = math.cos(heading), math.sin(heading)
    x = p[..., 0] * c - p[..., 1] * s
    y = p[..., 0] * s + p[..., 1] * c
    return np.stack([x, y], axis=-1) + np.asarray(origin, dtype=float)


def polyline_lengths(xy: np.ndarray) -> np.ndarray:
    """Cumulative arc length, starting at 0. xy is (N, 2)."""
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def resample_polyline(xy: np.ndarray, spacing: float) -> np.ndarray:
    """Resample (N, 2) points at a fixed arc-length spacing.

    Returns (M, 3) rows (x, y, heading); heading is the local tangent.
    The first and last original points are always kept.
    """
    xy = np.asarray(xy, dtype=float)
    cum = polyline_lengths(xy)
    total = cum[-1]
    if total <= 0.0:
        raise ValueError("degenerate polyline (zero length)")
    # epsilon keeps the sample count stable when total/spacing sits exactly
    # on an integer and the geometry was rebuilt with rounding noise
    n = max(int(math.floor(total / spacing + 1e-9)), 1)
    s = np.linspace(0.0, total, n + 1)
    x = np.interp(s, cum, xy[:, 0])
    y = np.interp(s, cum, xy[:, 1])
    # Tangent of the segment each sample falls in; the final sample reuses
    # the last segment direction.
    seg_idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(xy) - 2)
    d = xy[seg_idx + 1] - xy[seg_idx]
    heading = np.arctan2(d[:, 1], d[:, 0])
    return np.stack([x, y, heading], axis=1)


class CachedPolyline:
    """A polyline with precomputed segment data for fast repeated queries."""

    def __init__(self, xy: np.ndarray):
        self.xy = np.asarray(xy, dtype=float)
        if len(self.xy) < 2:
            raise ValueError("polyline needs at least 2 points")
        self._a = self.xy[:-1]
        self._ab = self.xy[1:] - self.xy[:-1]
        self._len2 = np.einsum("ij,ij->i", self._ab, self._ab)
        self._safe_len2 = np.where(self._len2 == 0.0, 1.0, self._len2)
        self.cum = polyline_lengths(self.xy)
        self.length = float(self.cum[-1])

    def project_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Arc lengths and distances of the closest points for (K, 2) queries."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        rel = p[:, None, :] - self._a[None, :, :]
        t = np.einsum("kij,ij->ki", rel, self._ab) / self._safe_len2[None, :]
        t = np.clip(t, 0.0, 1.0)
        closest = self._a[None, :, :] + t[:, :, None] * self._ab[None, :, :]
        d2 = np.sum((closest - p[:, None, :]) ** 2, axis=2)
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(p))
        s = self.cum[k] + t[rows, k] * np.sqrt(self._len2[k])
        return s, np.sqrt(d2[rows, k])

    def project(self, point: np.ndarray) -> tuple[float, float]:
        s, d = self.project_many(np.asarray(point, dtype=float)[None, :])
        return float(s[0]), float(d[0])

    def point_at(self, s: float) -> np.ndarray:
        """Point at arc length s (clamped to the ends)."""
        s = min(max(s, 0.0), self.length)
        k = int(np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.xy) - 2))
        seg = self.cum[k + 1] - self.cum[k]
        t = 0.0 if seg == 0.0 else (s - self.cum[k]) / seg
        return self.xy[k] + t * (self.xy[k + 1] - self.xy[k])


def project_to_polyline(xy: np.ndarray, point: np.ndarray) -> tuple[float, float]:
    """One-shot projection; returns (arc length, distance)."""
    return CachedPolyline(xy).project(point)


def point_at_arclength(xy: np.ndarray, s: float) -> np.ndarray:
    """Point on the polyline at arc length s (clamped to the ends)."""
    return CachedPolyline(xy).point_at(s)


class PolygonTester:
    """Even-odd ray casting with precomputed edges."""

    def __init__(self, polygon: np.ndarray):
        poly = np.asarray(polygon, dtype=float)
        self.px = poly[:, 0]
        self.py = poly[:, 1]
        self.qx = np.roll(self.px, -1)
        self.qy = np.roll(self.py, -1)
        dy = self.qy - self.py
        self._dy = np.where(dy == 0.0, 1.0, dy)
        self._dx = self.qx - self.px

    def contains_many(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        x = p[:, 0:1]
        y = p[:, 1:2]
        crosses = (self.py[None, :] > y) != (self.qy[None, :] > y)
        x_int = self.px[None, :] + (y - self.py[None, :]) * self._dx[None, :] / self._dy[None, :]
        hits = crosses & (x < x_int)
        return hits.sum(axis=1) % 2 == 1

    def contains(self, point: np.ndarray) -> bool:
        return bool(self.contains_many(np.asarray(point, dtype=float)[None, :])[0])


def point_in_polygon(point: np.ndarray, polygon: np.ndarray) -> bool:
    """Even-odd ray casting test. polygon is (M, 2), not necessarily closed."""
    return PolygonTester(polygon).contains(point)


def rectangle_corners(center: np.ndarray, heading: float, length: float, width: float) -> np.ndarray:
    """Corners of an oriented rectangle, counterclockwise, shape (4, 2)."""
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return from_frame(local, np.asarray(center, dtype=float), heading)


def rectangles_overlap(corners_a: np.ndarray, corners_b: np.ndarray) -> bool:
    """Separating-axis test for two oriented rectangles (touching counts)."""
    for corners in (corners_a, corners_b):
        edges = np.diff(np.vstack([corners, corners[:1]]), axis=0)[:2]
        for edge in edges:
            axis = np.array([-edge[1], edge[0]])
            pa = corners_a @ axis
            pb = corners_b @ axis
            if pa.max() < pb.min() or pb.max() < pa.min():
                return False
    return True


def segment_intersections(xy_a: np.ndarray, xy_b: np.ndarray) -> list[np.ndarray]:
    """Proper intersection points between two polylines (shared endpoints excluded)."""
    hits: list[np.ndarray] = []
    for i in range(len(xy_a) - 1):
        p, r = xy_a[i], xy_a[i + 1] - xy_a[i]
        for j in range(len(xy_b) - 1):
            q, s = xy_b[j], xy_b[j + 1] - xy_b[j]
            denom = r[0] * s[1] - r[1] * s[0]
            if abs(denom) < 1e-12:
                continue
            qp = q - p
            t = (qp[0] * s[1] - qp[1] * s[0]) / denom
            u = (qp[0] * r[1] - qp[1] * r[0]) / denom
            if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
                hits.append(p + t * r)
    # Merge duplicates from adjacent segments touching at a vertex.
    merged: list[np.ndarray] = []
    for h in hits:
        if not any(np.linalg.norm(h - m) < 1e-6 for m in merged):
            merged.append(h)
    return merged
