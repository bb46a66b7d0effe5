"""
Rule-based demonstrator: pure-pursuit curvature plus IDM acceleration.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from kinematics import KaPoint

from .scene import EGO_LENGTH, EGO_WIDTH, Scene

CRUISE_SPEED = 8.0
LOOKAHEAD_MIN = 6.0
LOOKAHEAD_GAIN = 1.2
RECOVERY_LOOKAHEAD = 4.0

IDM_MAX_ACCEL = 1.0
IDM_COMFORT_DECEL = 1.5
IDM_MIN_GAP = 4.0
IDM_HEADWAY = 1.5
IDM_EXPONENT = 4

KAPPA_LIMIT = 0.22
ACCEL_LIMIT = 1.3


@dataclass(frozen=True)
class ExpertAction:
    action: KaPoint
    flagged: bool = False


def pure_pursuit(scene: Scene, pose, v: float, lookahead: Optional[float] = None) -> float:
    """Curvature of the arc through the ego and the centerline point `lookahead` meters ahead."""
    x, y, yaw = pose
    s, _ = scene.centerline.project([[x, y]])
    ld = max(LOOKAHEAD_MIN, LOOKAHEAD_GAIN * v) if lookahead is None else lookahead
    tx, ty, _ = scene.centerline.point_at(s[0] + ld)[0]
    dx, dy = tx - x, ty - y
    c, sn = math.cos(yaw), math.sin(yaw)
    lx, ly = dx * c + dy * sn, -dx * sn + dy * c
    return 2.0 * ly / max(lx * lx + ly * ly, 1e-9)


def lead_gap(scene: Scene, pose, time: float) -> Tuple[float, float]:
    """Bumper gap and along-lane speed of the nearest laterally overlapping object ahead."""
    s_ego, l_ego = scene.centerline.project([pose[:2]])
    gap, speed = math.inf, 0.0
    objects = [(b, 0.0) for b in scene.obstacles] + [(a.box(scene.centerline, time), a.speed) for a in scene.agents]
    for box, obj_speed in objects:
        s_obj, l_obj = scene.centerline.project([[box.x, box.y]])
        if abs(l_obj[0] - l_ego[0]) >= 0.5 * (box.width + EGO_WIDTH):
            continue
        g = s_obj[0] - s_ego[0] - 0.5 * (box.length + EGO_LENGTH)
        if s_obj[0] > s_ego[0] and g < gap:
            gap, speed = g, obj_speed
    return gap, speed


def idm_accel(v: float, gap: float, lead_speed: float, cruise: float = CRUISE_SPEED) -> float:
    free = 1.0 - (max(v, 0.0) / cruise) ** IDM_EXPONENT
    if not math.isfinite(gap):
        return IDM_MAX_ACCEL * free
    dv = v - lead_speed
    desired = IDM_MIN_GAP + max(0.0, v * IDM_HEADWAY + v * dv / (2.0 * math.sqrt(IDM_MAX_ACCEL * IDM_COMFORT_DECEL)))
    return IDM_MAX_ACCEL * (free - (desired / max(gap, 0.1)) ** 2)


def expert_policy(scene: Scene, pose, v: float, time: float = 0.0, cruise: float = CRUISE_SPEED) -> ExpertAction:
    pose = np.asarray(pose, dtype=np.float64)
    _, l = scene.centerline.project([pose[:2]])
    off_corridor = abs(l[0]) > scene.half_width - 0.5 * EGO_WIDTH
    kappa = pure_pursuit(scene, pose, v, RECOVERY_LOOKAHEAD if off_corridor else None)
    gap, lead_speed = lead_gap(scene, pose, time)
    accel = idm_accel(v, gap, lead_speed, cruise)
    action = KaPoint(float(np.clip(kappa, -KAPPA_LIMIT, KAPPA_LIMIT)), float(np.clip(accel, -ACCEL_LIMIT, ACCEL_LIMIT)))
    return ExpertAction(action, bool(off_corridor))
