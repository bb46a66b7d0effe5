"""
Planar geometry for the simulator: a reference polyline with arc-length
queries and oriented rectangles (ego, obstacles, agents).
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from errors import ConfigurationError

NEAREST_VERTICES = 4


class Polyline:
    """Densely sampled curve; nearest-vertex candidates come from a kd-tree."""

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=np.float64)[:, :2]
        if len(pts) < 2:
            raise ConfigurationError("polyline needs at least two vertices")
        seg = np.diff(pts, axis=0)
        lengths = np.linalg.norm(seg, axis=1)
        if np.any(lengths <= 0.0):
            raise ConfigurationError("polyline has repeated consecutive vertices")
        self.points = pts
        self.lengths = lengths
        self.tangents = seg / lengths[:, None]
        self.arc = np.concatenate([[0.0], np.cumsum(lengths)])
        self.headings = np.arctan2(self.tangents[:, 1], self.tangents[:, 0])
        self.tree = cKDTree(pts)

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def project(self, xy) -> Tuple[np.ndarray, np.ndarray]:
        """(N, 2) points -> arc length s and signed offset l (left positive)."""
        pts = np.atleast_2d(np.asarray(xy, dtype=np.float64))[:, :2]
        k = min(NEAREST_VERTICES, len(self.points))
        _, idx = self.tree.query(pts, k=k)
        idx = np.asarray(idx).reshape(len(pts), k)
        # each nearby vertex contributes the segments on both sides
        cand = np.concatenate([idx - 1, idx], axis=1)
        cand = np.clip(cand, 0, len(self.lengths) - 1)
        starts = self.points[cand]
        tangents = self.tangents[cand]
        rel = pts[:, None, :] - starts
        t = np.clip(np.einsum("nkd,nkd->nk", rel, tangents), 0.0, self.lengths[cand])
        foot = starts + t[..., None] * tangents
        d2 = np.sum((pts[:, None, :] - foot) ** 2, axis=-1)
        best = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        seg = cand[rows, best]
        u = self.tangents[seg]
        r = pts - self.points[seg]
        along = np.einsum("nd,nd->n", r, u)
        last = len(self.lengths) - 1
        # beyond either end the projection extends the end segment
        along = np.where((seg == 0) & (along < 0.0), along, np.where((seg == last) & (along > self.lengths[seg]), along, t[rows, best]))
        l = u[:, 0] * r[:, 1] - u[:, 1] * r[:, 0]
        return self.arc[seg] + along, l

    def distance(self, xy) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(xy, dtype=np.float64))[:, :2]
        s, l = self.project(pts)
        inside = (s >= 0.0) & (s <= self.length)
        ends = np.minimum(
            np.linalg.norm(pts - self.points[0], axis=1), np.linalg.norm(pts - self.points[-1], axis=1)
        )
        return np.where(inside, np.abs(l), ends)

    def point_at(self, s) -> np.ndarray:
        """(x, y, heading) at arc length s, extrapolated past the ends."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        k = np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self.lengths) - 1)
        xy = self.points[k] + (s - self.arc[k])[:, None] * self.tangents[k]
        return np.column_stack([xy, self.headings[k]])

    def heading_at(self, s) -> np.ndarray:
        return self.point_at(s)[:, 2]

    def lateral_point(self, s: float, l: float) -> np.ndarray:
        x, y, h = self.point_at(s)[0]
        return np.array([x - l * math.sin(h), y + l * math.cos(h), h])


@dataclass(frozen=True)
class Box:
    """Oriented rectangle centered at (x, y)."""

    x: float
    y: float
    yaw: float
    length: float
    width: float

    def corners(self) -> np.ndarray:
        return box_corners(self.x, self.y, self.yaw, self.length, self.width)


def box_corners(x: float, y: float, yaw: float, length: float, width: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    return np.array([x, y]) + local @ np.array([[c, s], [-s, c]])


def _axes(corners: np.ndarray) -> np.ndarray:
    edges = np.roll(corners, -1, axis=0) - corners
    return np.stack([-edges[:2, 1], edges[:2, 0]], axis=1)


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test on two (4, 2) corner arrays; touching counts."""
    for axis in np.concatenate([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def segment_distance(p1: np.ndarray, p2: np.ndarray, q1: np.ndarray, q2: np.ndarray) -> float:
    """Minimum distance between segments p1p2 and q1q2."""

    def point_seg(p, a, b):
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
        return float(np.linalg.norm(p - (a + t * ab)))

    def cross(u, v):
        return u[0] * v[1] - u[1] * v[0]

    r, s = p2 - p1, q2 - q1
    denom = cross(r, s)
    if denom != 0.0:
        t = cross(q1 - p1, s) / denom
        u = cross(q1 - p1, r) / denom
        if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
            return 0.0
    return min(point_seg(p1, q1, q2), point_seg(p2, q1, q2), point_seg(q1, p1, p2), point_seg(q2, p1, p2))


def box_distance(a: np.ndarray, b: np.ndarray) -> float:
    """0 when the rectangles overlap, else the minimum edge-to-edge distance."""
    if boxes_overlap(a, b):
        return 0.0
    best = math.inf
    for i in range(4):
        for j in range(4):
            best = min(best, segment_distance(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4]))
    return best


def points_in_box(points: np.ndarray, box: Box) -> np.ndarray:
    """Mask of (N, 2) points inside the rectangle, boundary included."""
    rel = np.asarray(points, dtype=np.float64) - np.array([box.x, box.y])
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    lx = rel[:, 0] * c + rel[:, 1] * s
    ly = -rel[:, 0] * s + rel[:, 1] * c
    return (np.abs(lx) <= 0.5 * box.length) & (np.abs(ly) <= 0.5 * box.width)
