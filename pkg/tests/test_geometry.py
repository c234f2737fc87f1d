"""Exact segment distances vs a dense point-sampling oracle."""

import math

import numpy as np
import pytest

from siteswarm.geometry import (
    Disc,
    Rect,
    Segment,
    point_segment_distance,
    segment_disc_distance,
    segment_rect_distance,
    segment_segment_distance,
    segments_intersect,
    wrap_angle,
)


def sampled_distance(s: Segment, t: Segment, n: int = 2000) -> float:
    u = np.linspace(0.0, 1.0, n)
    px = s.ax + u * (s.bx - s.ax)
    py = s.ay + u * (s.by - s.ay)
    qx = t.ax + u * (t.bx - t.ax)
    qy = t.ay + u * (t.by - t.ay)
    d2 = (px[:, None] - qx[None, :]) ** 2 + (py[:, None] - qy[None, :]) ** 2
    return float(np.sqrt(d2.min()))


def test_crossing_segments_distance_zero():
    s = Segment(-1.0, 0.0, 1.0, 0.0)
    t = Segment(0.0, -1.0, 0.0, 1.0)
    assert segments_intersect(s, t)
    assert segment_segment_distance(s, t) == 0.0


def test_parallel_unit_separated():
    s = Segment(0.0, 0.0, 1.0, 0.0)
    t = Segment(0.0, 1.0, 1.0, 1.0)
    assert segment_segment_distance(s, t) == pytest.approx(1.0)


def test_collinear_overlapping():
    s = Segment(0.0, 0.0, 2.0, 0.0)
    t = Segment(1.0, 0.0, 3.0, 0.0)
    assert segment_segment_distance(s, t) == 0.0


def test_endpoint_touching():
    s = Segment(0.0, 0.0, 1.0, 0.0)
    t = Segment(1.0, 0.0, 2.0, 1.0)
    assert segment_segment_distance(s, t) == 0.0


def test_point_degenerate_segments():
    s = Segment(0.5, 0.5, 0.5, 0.5)
    t = Segment(0.0, 0.0, 1.0, 0.0)
    assert segment_segment_distance(s, t) == pytest.approx(0.5)
    u = Segment(2.0, 0.0, 2.0, 0.0)
    assert segment_segment_distance(s, u) == pytest.approx(math.hypot(1.5, 0.5))


def test_point_segment_endpoint_region():
    seg = Segment(0.0, 0.0, 1.0, 0.0)
    assert point_segment_distance(2.0, 0.0, seg) == pytest.approx(1.0)
    assert point_segment_distance(0.5, 0.3, seg) == pytest.approx(0.3)


def test_random_pairs_match_dense_sampling_oracle():
    """DERIVED oracle: exact distance vs 2000x2000 sampled points, within 2e-3."""
    rng = np.random.default_rng(404)
    for _ in range(40):
        pts = rng.uniform(-1.0, 1.0, size=8)
        s = Segment(pts[0], pts[1], pts[2], pts[3])
        t = Segment(pts[4], pts[5], pts[6], pts[7])
        exact = segment_segment_distance(s, t)
        approx = sampled_distance(s, t)
        assert abs(exact - approx) < 2e-3
        assert exact <= approx + 1e-12  # sampling can only overestimate


def test_disc_distance():
    seg = Segment(0.0, 0.0, 1.0, 0.0)
    assert segment_disc_distance(seg, Disc(0.5, 0.5, 0.1)) == pytest.approx(0.4)
    assert segment_disc_distance(seg, Disc(0.5, 0.05, 0.1)) == 0.0


def test_disc_negative_radius_rejected():
    with pytest.raises(ValueError):
        Disc(0.0, 0.0, -1.0)


def test_rect_contains_and_distance():
    rect = Rect(0.0, 0.0, 0.0, 1.0, 0.5)
    assert rect.contains(0.9, 0.4)
    assert not rect.contains(1.1, 0.0)
    inside = Segment(-0.1, 0.0, 0.1, 0.0)
    assert segment_rect_distance(inside, rect) == 0.0
    outside = Segment(0.0, 1.5, 1.0, 1.5)
    assert segment_rect_distance(outside, rect) == pytest.approx(1.0)


def test_rotated_rect_edges():
    rect = Rect(0.0, 0.0, math.pi / 4.0, 1.0, 1.0)
    corners = rect.corners()
    # rotating the unit square by 45 degrees puts a corner at (sqrt2, 0)
    assert any(
        abs(x - math.sqrt(2)) < 1e-12 and abs(y) < 1e-12 for x, y in corners
    )


def test_wrap_angle_range():
    for a in np.linspace(-12.0, 12.0, 401):
        w = wrap_angle(float(a))
        assert -math.pi < w <= math.pi + 1e-15
        assert abs(math.sin(w) - math.sin(a)) < 1e-12
        assert abs(math.cos(w) - math.cos(a)) < 1e-12
