"""Exact 2-D distance primitives used by collision detection.

Everything works on plain float tuples; these run in the simulator's inner
loop, so no numpy in the hot paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

Point = tuple[float, float]


@dataclass(frozen=True)
class Segment:
    ax: float
    ay: float
    bx: float
    by: float

    @property
    def a(self) -> Point:
        return (self.ax, self.ay)

    @property
    def b(self) -> Point:
        return (self.bx, self.by)

    @property
    def length(self) -> float:
        return math.hypot(self.bx - self.ax, self.by - self.ay)


@dataclass(frozen=True)
class Disc:
    x: float
    y: float
    radius: float

    def __post_init__(self) -> None:
        if self.radius < 0.0:
            raise ValueError(f"disc radius must be >= 0, got {self.radius}")


def wrap_angle(a: float) -> float:
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def point_segment_distance(px: float, py: float, seg: Segment) -> float:
    """Distance from a point to the closest point of a segment."""
    dx = seg.bx - seg.ax
    dy = seg.by - seg.ay
    dpx = px - seg.ax
    dpy = py - seg.ay
    dd = dx * dx + dy * dy
    if dd == 0.0:
        return math.hypot(dpx, dpy)
    t = (dpx * dx + dpy * dy) / dd
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    return math.hypot(dpx - t * dx, dpy - t * dy)


def _orient(ox: float, oy: float, ax: float, ay: float, bx: float, by: float) -> float:
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def segments_intersect(s: Segment, t: Segment) -> bool:
    """True when the closed segments share at least one point."""
    d1 = _orient(t.ax, t.ay, t.bx, t.by, s.ax, s.ay)
    d2 = _orient(t.ax, t.ay, t.bx, t.by, s.bx, s.by)
    d3 = _orient(s.ax, s.ay, s.bx, s.by, t.ax, t.ay)
    d4 = _orient(s.ax, s.ay, s.bx, s.by, t.bx, t.by)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    # collinear / endpoint-touching cases
    if d1 == 0 and point_segment_distance(s.ax, s.ay, t) == 0.0:
        return True
    if d2 == 0 and point_segment_distance(s.bx, s.by, t) == 0.0:
        return True
    if d3 == 0 and point_segment_distance(t.ax, t.ay, s) == 0.0:
        return True
    if d4 == 0 and point_segment_distance(t.bx, t.by, s) == 0.0:
        return True
    return False


def segment_segment_distance(s: Segment, t: Segment) -> float:
    """Minimum Euclidean distance between two segments; 0 iff they intersect."""
    if segments_intersect(s, t):
        return 0.0
    return min(
        point_segment_distance(s.ax, s.ay, t),
        point_segment_distance(s.bx, s.by, t),
        point_segment_distance(t.ax, t.ay, s),
        point_segment_distance(t.bx, t.by, s),
    )


def segment_disc_distance(seg: Segment, disc: Disc) -> float:
    """Distance from a segment to a disc's boundary (0 when overlapping)."""
    d = point_segment_distance(disc.x, disc.y, seg) - disc.radius
    return d if d > 0.0 else 0.0


@dataclass(frozen=True)
class Rect:
    """Oriented rectangle: center, heading, and half extents along its axes."""

    x: float
    y: float
    heading: float
    half_x: float
    half_y: float

    def corners(self) -> list[Point]:
        c = math.cos(self.heading)
        s = math.sin(self.heading)
        pts = []
        for sx, sy in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
            lx = sx * self.half_x
            ly = sy * self.half_y
            pts.append((self.x + c * lx - s * ly, self.y + s * lx + c * ly))
        return pts

    def edges(self) -> list[Segment]:
        pts = self.corners()
        return [
            Segment(pts[i][0], pts[i][1], pts[(i + 1) % 4][0], pts[(i + 1) % 4][1])
            for i in range(4)
        ]

    def contains(self, px: float, py: float) -> bool:
        c = math.cos(self.heading)
        s = math.sin(self.heading)
        dx = px - self.x
        dy = py - self.y
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        return abs(lx) <= self.half_x and abs(ly) <= self.half_y


def segment_rect_distance(seg: Segment, rect: Rect) -> float:
    """Distance from a segment to a solid rectangle (0 when touching or inside)."""
    if rect.contains(seg.ax, seg.ay) or rect.contains(seg.bx, seg.by):
        return 0.0
    return min(segment_segment_distance(seg, edge) for edge in rect.edges())


def point_rect_distance(px: float, py: float, rect: Rect) -> float:
    if rect.contains(px, py):
        return 0.0
    return min(point_segment_distance(px, py, edge) for edge in rect.edges())
