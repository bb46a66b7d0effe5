"""
Rule-based trajectory refinement.

Pipeline: lane anchors by gradient ascent on a lane-center likelihood map,
projection into the Frenet frame of a reference polyline, regularized
least-squares smoothing of the lateral correction and of arc length,
lift back to Cartesian and rate-limited yaw recomputation.

Usage:
    lane_map = LaneLikelihoodMap.from_bev_raster(bev.cells, bev.resolution)
    result = posttune_pipeline(poses, lane_map, centerline)
    refined = result.poses
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import sparse
from scipy.linalg import solveh_banded
from scipy.ndimage import gaussian_filter, map_coordinates
from scipy.optimize import isotonic_regression

from bev_quantizer import BevClass
from errors import ConfigurationError, DomainError, PlannerError, PosttuneError, SizeError
from kinematics import wrap_angle

logger = logging.getLogger(__name__)

DEFAULT_ASCENT_STEP = 0.25  # cells
DEFAULT_ASCENT_ITERS = 50
GRADIENT_TOL = 1e-6
DEFAULT_BAND_SIGMA = 1.0  # cells
DUPLICATE_TOL = 1e-9


class SmootherWeights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    w_l1: float = Field(0.5, ge=0.0)
    w_l2: float = Field(2.0, ge=0.0)
    w_s1: float = Field(0.1, ge=0.0)
    w_s2: float = Field(1.0, ge=0.0)
    yaw_rate_limit: float = Field(0.3, gt=0.0)
    ascent_step: float = Field(DEFAULT_ASCENT_STEP, gt=0.0)
    ascent_iters: int = Field(DEFAULT_ASCENT_ITERS, ge=0)
    # polyline defining the Frenet frame: the lane centerline or the raw trajectory itself
    frenet_reference: Literal["centerline", "trajectory"] = "centerline"


# ---------------------------------------------------------------------------
# Lane likelihood map
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaneLikelihoodMap:
    """
    values[row, col]: row indexes y ascending, col indexes x ascending.
    (x0, y0) is the world position of the center of cell (0, 0).
    """

    values: np.ndarray
    resolution: float
    x0: float
    y0: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise SizeError(f"lane map must be a non-empty 2-D grid, got shape {values.shape}")
        if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
            raise DomainError("lane map values must lie in [0, 1]")
        if not self.resolution > 0:
            raise DomainError(f"resolution must be positive, got {self.resolution}")
        object.__setattr__(self, "values", values)
        gy, gx = np.gradient(values) if min(values.shape) > 1 else (np.zeros_like(values), np.zeros_like(values))
        object.__setattr__(self, "_grad", (gy, gx))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    def to_cell(self, xy) -> np.ndarray:
        """World (x, y) -> continuous (row, col)."""
        xy = np.asarray(xy, dtype=np.float64)
        return np.stack([(xy[..., 1] - self.y0) / self.resolution, (xy[..., 0] - self.x0) / self.resolution], axis=-1)

    def to_world(self, cell) -> np.ndarray:
        cell = np.asarray(cell, dtype=np.float64)
        return np.stack([self.x0 + cell[..., 1] * self.resolution, self.y0 + cell[..., 0] * self.resolution], axis=-1)

    def contains_cell(self, cell) -> bool:
        h, w = self.shape
        return bool(0.0 <= cell[0] <= h - 1 and 0.0 <= cell[1] <= w - 1)

    def sample(self, cell) -> float:
        return float(map_coordinates(self.values, np.reshape(cell, (2, 1)), order=1, mode="nearest")[0])

    def gradient(self, cell) -> np.ndarray:
        coords = np.reshape(cell, (2, 1))
        gy, gx = self._grad
        return np.array(
            [
                map_coordinates(gy, coords, order=1, mode="nearest")[0],
                map_coordinates(gx, coords, order=1, mode="nearest")[0],
            ]
        )

    @classmethod
    def from_bev_raster(
        cls,
        cells: np.ndarray,
        resolution: float,
        ahead: Optional[float] = None,
        lateral: Optional[float] = None,
        band_class: int = BevClass.CENTER_BAND,
        sigma_cells: float = DEFAULT_BAND_SIGMA,
    ) -> "LaneLikelihoodMap":
        """
        Blurred lane-center band of an ego-frame raster.

        Raster row i sits at x = ahead - (i + 0.5) r and column j at
        y = lateral - (j + 0.5) r; defaults place the ego a quarter of the
        extent from the rear edge and centered laterally.
        """
        cells = np.asarray(cells)
        if cells.ndim != 2:
            raise SizeError(f"raster must be 2-D, got shape {cells.shape}")
        n_rows, n_cols = cells.shape
        ahead = 0.75 * n_rows * resolution if ahead is None else ahead
        lateral = 0.5 * n_cols * resolution if lateral is None else lateral
        band = gaussian_filter((cells == band_class).astype(np.float64), sigma=sigma_cells)
        peak = band.max()
        if peak > 0:
            band = band / peak
        values = np.clip(band[::-1, ::-1].T, 0.0, 1.0)
        x0 = ahead - (n_rows - 0.5) * resolution
        y0 = lateral - (n_cols - 0.5) * resolution
        return cls(values, resolution, x0, y0)

    @classmethod
    def from_reference(
        cls,
        reference: np.ndarray,
        x_range: Tuple[float, float],
        y_range: Tuple[float, float],
        resolution: float,
        sigma: float = 0.5,
    ) -> "LaneLikelihoodMap":
        """exp(-d^2 / 2 sigma^2) of the distance to the reference polyline."""
        xs = np.arange(x_range[0], x_range[1] + 0.5 * resolution, resolution)
        ys = np.arange(y_range[0], y_range[1] + 0.5 * resolution, resolution)
        gx, gy = np.meshgrid(xs, ys)
        d = distance_to_polyline(np.stack([gx.ravel(), gy.ravel()], axis=1), reference)
        values = np.exp(-(d**2) / (2.0 * sigma**2)).reshape(gx.shape)
        return cls(values, resolution, float(xs[0]), float(ys[0]))


def lane_anchor(
    lane_map: LaneLikelihoodMap,
    waypoint,
    step: float = DEFAULT_ASCENT_STEP,
    max_iters: int = DEFAULT_ASCENT_ITERS,
) -> Tuple[np.ndarray, bool]:
    """
    Gradient ascent on the bilinear map. Returns (anchor_xy, flagged);
    a waypoint outside the map is returned unchanged and flagged.
    """
    waypoint = np.asarray(waypoint, dtype=np.float64)[:2]
    cell = lane_map.to_cell(waypoint)
    if not lane_map.contains_cell(cell):
        return waypoint.copy(), True
    h, w = lane_map.shape
    for _ in range(max_iters):
        grad = lane_map.gradient(cell)
        if np.linalg.norm(grad) < GRADIENT_TOL:
            break
        cell = cell + step * grad
        cell = np.array([np.clip(cell[0], 0.0, h - 1), np.clip(cell[1], 0.0, w - 1)])
    return lane_map.to_world(cell), False


# ---------------------------------------------------------------------------
# Frenet frame
# ---------------------------------------------------------------------------


@dataclass
class FrenetTrajectory:
    s: np.ndarray
    l: np.ndarray

    def __len__(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class _Reference:
    points: np.ndarray
    tangents: np.ndarray
    lengths: np.ndarray
    arc: np.ndarray


def _reference(polyline) -> _Reference:
    pts = np.asarray(polyline, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 2:
        raise ConfigurationError(f"reference must be (N, 2), got shape {pts.shape}")
    pts = pts[:, :2]
    if len(pts) >= 2:
        keep = np.concatenate([[True], np.linalg.norm(np.diff(pts, axis=0), axis=1) > 0.0])
        pts = pts[keep]
    if len(pts) < 2:
        raise ConfigurationError("reference polyline needs at least two distinct vertices")
    seg = np.diff(pts, axis=0)
    lengths = np.linalg.norm(seg, axis=1)
    return _Reference(pts, seg / lengths[:, None], lengths, np.concatenate([[0.0], np.cumsum(lengths)]))


def _closest_segments(points: np.ndarray, ref: _Reference):
    """Per point: segment index and unclipped segment parameter t (meters)."""
    rel = points[:, None, :] - ref.points[None, :-1, :]
    t = np.einsum("nkd,kd->nk", rel, ref.tangents)
    t_clip = np.clip(t, 0.0, ref.lengths[None, :])
    foot = ref.points[None, :-1, :] + t_clip[..., None] * ref.tangents[None]
    d2 = np.sum((points[:, None, :] - foot) ** 2, axis=-1)
    k = np.argmin(d2, axis=1)
    rows = np.arange(len(points))
    t_k = t[rows, k]
    last = len(ref.lengths) - 1
    # extrapolate along the end segments only
    t_k = np.where((k == 0) & (t_k < 0.0), t_k, np.where((k == last) & (t_k > ref.lengths[k]), t_k, t_clip[rows, k]))
    return k, t_k, np.sqrt(d2[rows, k])


def frenet_project(waypoints, reference) -> FrenetTrajectory:
    ref = _reference(reference)
    pts = np.atleast_2d(np.asarray(waypoints, dtype=np.float64))[:, :2]
    k, t, _ = _closest_segments(pts, ref)
    rel = pts - ref.points[k]
    u = ref.tangents[k]
    l = u[:, 0] * rel[:, 1] - u[:, 1] * rel[:, 0]
    return FrenetTrajectory(ref.arc[k] + t, l)


def frenet_lift(frenet: FrenetTrajectory, reference) -> np.ndarray:
    ref = _reference(reference)
    s = np.asarray(frenet.s, dtype=np.float64)
    l = np.asarray(frenet.l, dtype=np.float64)
    k = np.clip(np.searchsorted(ref.arc, s, side="right") - 1, 0, len(ref.lengths) - 1)
    u = ref.tangents[k]
    normal = np.stack([-u[:, 1], u[:, 0]], axis=1)
    return ref.points[k] + (s - ref.arc[k])[:, None] * u + l[:, None] * normal


def distance_to_polyline(points, polyline) -> np.ndarray:
    ref = _reference(polyline)
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :2]
    out = np.empty(len(pts))
    chunk = max(1, 200_000 // len(ref.lengths))
    for start in range(0, len(pts), chunk):
        block = pts[start : start + chunk]
        rel = block[:, None, :] - ref.points[None, :-1, :]
        t = np.clip(np.einsum("nkd,kd->nk", rel, ref.tangents), 0.0, ref.lengths[None, :])
        foot = ref.points[None, :-1, :] + t[..., None] * ref.tangents[None]
        out[start : start + chunk] = np.sqrt(np.min(np.sum((block[:, None, :] - foot) ** 2, axis=-1), axis=1))
    return out


# ---------------------------------------------------------------------------
# Banded smoothers
# ---------------------------------------------------------------------------


def difference_operators(n: int) -> Tuple[sparse.spmatrix, sparse.spmatrix]:
    """Forward first (n-1 x n) and second (n-2 x n) differences, no padding."""
    d1 = sparse.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n))
    d2 = sparse.diags([np.ones(n - 2), -2.0 * np.ones(n - 2), np.ones(n - 2)], [0, 1, 2], shape=(n - 2, n))
    return d1, d2


def smoothing_matrix(n: int, w1: float, w2: float) -> sparse.csr_matrix:
    if n < 3:
        raise SizeError(f"smoothing needs at least 3 samples, got {n}")
    if w1 < 0 or w2 < 0:
        raise DomainError("smoothing weights must be non-negative")
    d1, d2 = difference_operators(n)
    return (sparse.identity(n) + w1 * (d1.T @ d1) + w2 * (d2.T @ d2)).tocsr()


def _banded_solve(matrix: sparse.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    n = matrix.shape[0]
    ab = np.zeros((3, n))
    ab[2] = matrix.diagonal(0)
    ab[1, 1:] = matrix.diagonal(1)
    ab[0, 2:] = matrix.diagonal(2)
    return solveh_banded(ab, rhs)


def smoothing_objective(x, target, w1: float, w2: float) -> float:
    """|x - target|^2 + w1 |D1 x|^2 + w2 |D2 x|^2."""
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    return float(np.sum((x - target) ** 2) + w1 * np.sum(np.diff(x) ** 2) + w2 * np.sum(np.diff(x, 2) ** 2))


def solve_lateral(gap, w1: float, w2: float) -> np.ndarray:
    """Delta-l minimizing the lateral objective for the anchor gap."""
    gap = np.asarray(gap, dtype=np.float64)
    return _banded_solve(smoothing_matrix(len(gap), w1, w2), gap)


def solve_longitudinal(s_raw, w1: float, w2: float) -> np.ndarray:
    """Smoothed arc length, then projected onto non-decreasing sequences."""
    s_raw = np.asarray(s_raw, dtype=np.float64)
    s = _banded_solve(smoothing_matrix(len(s_raw), w1, w2), s_raw)
    return np.asarray(isotonic_regression(s, increasing=True).x, dtype=np.float64)


# ---------------------------------------------------------------------------
# Yaw
# ---------------------------------------------------------------------------


def recompute_yaw(xy, rate_limit: float, initial_yaw: Optional[float] = None) -> np.ndarray:
    xy = np.asarray(xy, dtype=np.float64)[:, :2]
    n = len(xy)
    if n < 2:
        raise SizeError(f"yaw recomputation needs at least 2 waypoints, got {n}")
    if not rate_limit > 0:
        raise DomainError(f"rate limit must be positive, got {rate_limit}")
    d = np.diff(xy, axis=0)
    raw = np.empty(n)
    prev = 0.0 if initial_yaw is None else float(initial_yaw)
    for t in range(n - 1):
        if np.hypot(d[t, 0], d[t, 1]) > DUPLICATE_TOL:
            prev = float(np.arctan2(d[t, 1], d[t, 0]))
        raw[t] = prev
    raw[-1] = raw[-2]

    yaw = np.empty(n)
    yaw[0] = raw[0] if initial_yaw is None else wrap_angle(initial_yaw + np.clip(wrap_angle(raw[0] - initial_yaw), -rate_limit, rate_limit))
    for t in range(1, n):
        yaw[t] = wrap_angle(yaw[t - 1] + np.clip(wrap_angle(raw[t] - yaw[t - 1]), -rate_limit, rate_limit))
    return yaw


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


@dataclass
class PosttuneResult:
    poses: np.ndarray
    frenet: FrenetTrajectory
    anchors: np.ndarray
    diagnostics: Dict[str, float] = field(default_factory=dict)


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PlannerError as exc:
        raise PosttuneError(name, exc) from exc


def posttune_pipeline(
    trajectory,
    lane_map: LaneLikelihoodMap,
    reference,
    weights: SmootherWeights = SmootherWeights(),
    initial_yaw: Optional[float] = None,
) -> PosttuneResult:
    """Refine (N, 2|3) waypoints given in the frame of lane_map and reference."""
    traj = np.atleast_2d(np.asarray(trajectory, dtype=np.float64))
    xy = traj[:, :2]

    def anchors_of(points):
        out = [lane_anchor(lane_map, p, weights.ascent_step, weights.ascent_iters) for p in points]
        return np.array([a for a, _ in out]).reshape(-1, 2), int(sum(f for _, f in out))

    anchors, flagged = _stage("anchor", anchors_of, xy)
    if weights.frenet_reference == "trajectory":
        reference = xy
    raw = _stage("frenet", frenet_project, xy, reference)
    lane = _stage("frenet", frenet_project, anchors, reference)
    gap = lane.l - raw.l
    delta = _stage("lateral", solve_lateral, gap, weights.w_l1, weights.w_l2)
    s_new = _stage("longitudinal", solve_longitudinal, raw.s, weights.w_s1, weights.w_s2)
    refined = FrenetTrajectory(s_new, raw.l + delta)
    xy_new = _stage("lift", frenet_lift, refined, reference)
    yaw = _stage("yaw", recompute_yaw, xy_new, weights.yaw_rate_limit, initial_yaw)

    diagnostics = {
        "lateral_objective": smoothing_objective(delta, gap, weights.w_l1, weights.w_l2),
        "lateral_objective_zero": smoothing_objective(np.zeros_like(gap), gap, weights.w_l1, weights.w_l2),
        "lateral_objective_snap": smoothing_objective(gap, gap, weights.w_l1, weights.w_l2),
        "longitudinal_objective": smoothing_objective(s_new, raw.s, weights.w_s1, weights.w_s2),
        "max_displacement": float(np.max(np.linalg.norm(xy_new - xy, axis=1))),
        "flagged_anchors": flagged,
    }
    if flagged:
        logger.warning("posttune: %d waypoint(s) outside the lane map", flagged)
    return PosttuneResult(np.column_stack([xy_new, yaw]), refined, anchors, diagnostics)
