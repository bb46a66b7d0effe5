"""
Ego-centric BEV rasterization, geometric distances and the closed-loop
transition.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from bev_quantizer import DEFAULT_BEV_SIZE, DEFAULT_RESOLUTION, BevClass, BevGrid
from kinematics import DEFAULT_DT, KaPoint, rollout_ka

from .geometry import Box, box_corners, box_distance, boxes_overlap, points_in_box
from .scene import EGO_LENGTH, EGO_WIDTH, Scene

BAND_HALF_WIDTH = 0.5
AHEAD_FRACTION = 0.75


def raster_extent(size: int, resolution: float) -> Tuple[float, float]:
    """(ahead, lateral): distances from the ego to the front and left raster edges."""
    return AHEAD_FRACTION * size * resolution, 0.5 * size * resolution


def clearance_cap(size: int = DEFAULT_BEV_SIZE, resolution: float = DEFAULT_RESOLUTION) -> float:
    return 0.5 * size * resolution


def cell_centers_local(size: int, resolution: float) -> np.ndarray:
    """(size, size, 2) ego-frame centers: row i -> x = ahead - (i + .5) r, col j -> y = lateral - (j + .5) r."""
    ahead, lateral = raster_extent(size, resolution)
    xs = ahead - (np.arange(size) + 0.5) * resolution
    ys = lateral - (np.arange(size) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def rasterize_bev(
    scene: Scene,
    pose,
    time: float = 0.0,
    size: int = DEFAULT_BEV_SIZE,
    resolution: float = DEFAULT_RESOLUTION,
) -> BevGrid:
    """Priority: obstacle > ego > lane-center band > drivable > background."""
    x, y, yaw = (float(p) for p in pose[:3])
    local = cell_centers_local(size, resolution).reshape(-1, 2)
    c, s = math.cos(yaw), math.sin(yaw)
    world = np.column_stack([x + local[:, 0] * c - local[:, 1] * s, y + local[:, 0] * s + local[:, 1] * c])

    arc, lat = scene.centerline.project(world)
    on_route = (arc >= 0.0) & (arc <= scene.centerline.length)
    cells = np.full(len(world), BevClass.BACKGROUND, dtype=np.uint8)
    cells[on_route & (np.abs(lat) <= scene.half_width)] = BevClass.DRIVABLE
    cells[on_route & (np.abs(lat) <= BAND_HALF_WIDTH)] = BevClass.CENTER_BAND
    ego = (np.abs(local[:, 0]) <= 0.5 * EGO_LENGTH) & (np.abs(local[:, 1]) <= 0.5 * EGO_WIDTH)
    cells[ego] = BevClass.EGO
    for box in scene.boxes(time):
        cells[points_in_box(world, box)] = BevClass.OBSTACLE
    return BevGrid(cells.reshape(size, size), resolution)


def ego_box(pose) -> Box:
    return Box(float(pose[0]), float(pose[1]), float(pose[2]), EGO_LENGTH, EGO_WIDTH)


def distances(scene: Scene, pose, time: float = 0.0, cap: Optional[float] = None) -> Tuple[float, float]:
    """(d_ctr, d_clr); clearance is capped at the BEV radius."""
    cap = clearance_cap() if cap is None else cap
    d_ctr = float(scene.centerline.distance([pose[:2]])[0])
    ego = ego_box(pose).corners()
    d_clr = cap
    for box in scene.boxes(time):
        # cheap center-distance reject before the exact rectangle test
        if math.hypot(box.x - pose[0], box.y - pose[1]) - 0.5 * math.hypot(box.length, box.width) - 0.5 * math.hypot(EGO_LENGTH, EGO_WIDTH) > d_clr:
            continue
        d_clr = min(d_clr, box_distance(ego, box.corners()))
    return d_ctr, float(d_clr)


def in_collision(scene: Scene, pose, time: float) -> bool:
    ego = ego_box(pose).corners()
    return any(boxes_overlap(ego, box.corners()) for box in scene.boxes(time))


def is_offroad(scene: Scene, pose) -> bool:
    corners = box_corners(pose[0], pose[1], pose[2], EGO_LENGTH, EGO_WIDTH)
    arc, lat = scene.centerline.project(corners)
    return bool(np.any(np.abs(lat) > scene.half_width) or np.any(arc < 0.0) or np.any(arc > scene.centerline.length))


@dataclass(frozen=True)
class StepResult:
    pose: np.ndarray
    v: float
    collision: bool
    offroad: bool


def step(scene: Scene, pose, v: float, action: KaPoint, dt: float = DEFAULT_DT, time: float = 0.0) -> StepResult:
    """Advance the ego one step; agents move to time + dt."""
    ka = np.array([[action.kappa, action.a]])
    nxt = rollout_ka(np.asarray(pose, dtype=np.float64), v, ka, dt)[1]
    v_next = max(float(v) + action.a * dt, 0.0)
    return StepResult(nxt, v_next, in_collision(scene, nxt, time + dt), is_offroad(scene, nxt))


def hold_position(scene: Scene, pose, time: float, dt: float = DEFAULT_DT) -> StepResult:
    """In-place action: the ego stays put and stops."""
    pose = np.asarray(pose, dtype=np.float64)
    return StepResult(pose.copy(), 0.0, in_collision(scene, pose, time + dt), is_offroad(scene, pose))
