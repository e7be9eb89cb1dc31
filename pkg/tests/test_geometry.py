import math

import numpy as np
import pytest

from svodrive.geometry import (
    CachedPolyline,
    PolygonTester,
    from_frame,
    normalize_angle,
    normalize_angles,
    point_at_arclength,
    point_in_polygon,
    project_to_polyline,
    rectangle_corners,
    rectangles_overlap,
    resample_polyline,
    segment_intersections,
    to_frame,
)


def test_normalize_angle_range():
    rng = np.random.default_rng(0)
    for theta in rng.uniform(-50, 50, size=500):
        a = normalize_angle(theta)
        assert -math.pi < a <= math.pi
        assert math.isclose(math.sin(a), math.sin(theta), abs_tol=1e-12)
        assert math.isclose(math.cos(a), math.cos(theta), abs_tol=1e-12)


def test_normalize_angle_boundary():
    assert normalize_angle(math.pi) == math.pi
    assert normalize_angle(-math.pi) == math.pi
    assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)


def test_normalize_angles_matches_scalar():
    rng = np.random.default_rng(1)
    thetas = rng.uniform(-20, 20, size=100)
    vec = normalize_angles(thetas)
    for t, v in zip(thetas, vec):
        assert math.isclose(v, normalize_angle(t), abs_tol=1e-12)


def test_frame_round_trip():
    rng = np.random.default_rng(2)
    pts = rng.normal(size=(40, 2)) * 30
    origin = np.array([3.0, -7.0])
    heading = 1.234
    back = from_frame(to_frame(pts, origin, heading), origin, heading)
    assert np.abs(back - pts).max() < 1e-9


def test_resample_spacing_and_endpoints():
    xy = np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 5.0]])
    out = resample_polyline(xy, 1.0)
    assert np.allclose(out[0, :2], [0, 0])
    assert np.allclose(out[-1, :2], [10, 5])
    gaps = np.linalg.norm(np.diff(out[:, :2], axis=0), axis=1)
    assert np.all(gaps < 1.01)
    # headings follow segment directions
    assert out[0, 2] == pytest.approx(0.0)
    assert out[-1, 2] == pytest.approx(math.pi / 2)


def test_projection_against_dense_sampling():
    rng = np.random.default_rng(3)
    xy = np.cumsum(rng.normal(size=(12, 2)), axis=0) * 5
    line = CachedPolyline(xy)
    # dense-sample oracle
    dense = np.vstack([
        resample_polyline(xy, 0.01)[:, :2],
    ])
    for _ in range(25):
        p = rng.normal(size=2) * 10
        s, d = line.project(p)
        d_oracle = np.min(np.linalg.norm(dense - p, axis=1))
        assert d == pytest.approx(d_oracle, abs=2e-2)
    s_end, _ = line.project(xy[-1])
    assert s_end == pytest.approx(line.length, abs=1e-9)


def test_point_at_arclength_round_trip():
    xy = np.array([[0.0, 0.0], [4.0, 0.0], [4.0, 4.0]])
    line = CachedPolyline(xy)
    for s in [0.0, 1.5, 4.0, 6.3, 8.0]:
        p = line.point_at(s)
        s2, d = line.project(p)
        assert d < 1e-12
        assert s2 == pytest.approx(s, abs=1e-12)
    assert point_at_arclength(xy, 5.0) == pytest.approx([4.0, 1.0])
    assert project_to_polyline(xy, np.array([5.0, 1.0]))[1] == pytest.approx(1.0)


def test_point_in_polygon_square():
    square = np.array([[0, 0], [4, 0], [4, 4], [0, 4]], dtype=float)
    assert point_in_polygon(np.array([2.0, 2.0]), square)
    assert not point_in_polygon(np.array([5.0, 2.0]), square)
    assert not point_in_polygon(np.array([-0.1, 2.0]), square)
    tester = PolygonTester(square)
    pts = np.array([[1, 1], [3.9, 3.9], [4.1, 2], [-1, -1]], dtype=float)
    assert tester.contains_many(pts).tolist() == [True, True, False, False]


def test_point_in_concave_polygon():
    # U-shape: the notch is outside
    poly = np.array([[0, 0], [6, 0], [6, 5], [4, 5], [4, 2], [2, 2], [2, 5], [0, 5]], dtype=float)
    assert point_in_polygon(np.array([1.0, 4.0]), poly)
    assert point_in_polygon(np.array([5.0, 4.0]), poly)
    assert not point_in_polygon(np.array([3.0, 4.0]), poly)


def _overlap_oracle(ca, cb, step=0.01):
    """Sample rectangle A on a 1 cm grid; check any point lies inside B."""
    ax = ca[0] - ca[1]
    ay = ca[3] - ca[0]
    la, wa = np.linalg.norm(ax), np.linalg.norm(ay)
    ux, uy = ax / la, ay / wa
    ns = np.arange(0.0, la + step / 2, step)
    ms = np.arange(0.0, wa + step / 2, step)
    grid = ca[1][None, None, :] + ns[:, None, None] * ux[None, None, :] + ms[None, :, None] * uy[None, None, :]
    pts = grid.reshape(-1, 2)
    # inside-B test via B's axes
    bx = cb[0] - cb[1]
    by = cb[3] - cb[0]
    lb, wb = np.linalg.norm(bx), np.linalg.norm(by)
    vx, vy = bx / lb, by / wb
    rel = pts - cb[1]
    px = rel @ vx
    py = rel @ vy
    return bool(np.any((px >= 0) & (px <= lb) & (py >= 0) & (py <= wb)))


def test_sat_examples():
    a = rectangle_corners(np.zeros(2), 0.0, 4.6, 2.0)
    far = rectangle_corners(np.array([100.0, 0.0]), 0.3, 4.6, 2.0)
    same = rectangle_corners(np.zeros(2), 0.0, 4.6, 2.0)
    assert not rectangles_overlap(a, far)
    assert rectangles_overlap(a, same)


def test_sat_against_sampling_oracle():
    rng = np.random.default_rng(11)
    for _ in range(60):
        pa = rng.uniform(-3, 3, size=2)
        pb = rng.uniform(-3, 3, size=2)
        ha, hb = rng.uniform(-math.pi, math.pi, size=2)
        ca = rectangle_corners(pa, ha, 4.6, 2.0)
        cb = rectangle_corners(pb, hb, 4.6, 2.0)
        assert rectangles_overlap(ca, cb) == _overlap_oracle(ca, cb)


def test_segment_intersections_cross():
    a = np.array([[0.0, -1.0], [0.0, 1.0]])
    b = np.array([[-1.0, 0.0], [1.0, 0.0]])
    hits = segment_intersections(a, b)
    assert len(hits) == 1
    assert np.allclose(hits[0], [0, 0])
    parallel = segment_intersections(b, b + np.array([0.0, 1.0]))
    assert parallel == []
