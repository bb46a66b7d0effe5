"""
Pose <-> curvature/acceleration conversions.

Poses are sampled at a fixed timestep dt. The forward map takes consecutive
poses to per-step speed, yaw rate, curvature and acceleration; the inverse map
integrates curvature/acceleration back into poses. Array variants work on
(n, 3) arrays of (x, y, yaw); the EgoState variants wrap them.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from errors import DomainError, SizeError

DEFAULT_DT = 0.5
DEFAULT_EPS = 0.1

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DomainError(f"EgoState position must be finite, got ({self.x}, {self.y})")
        if not (-math.pi < self.yaw <= math.pi):
            raise DomainError(f"EgoState yaw must lie in (-pi, pi], got {self.yaw}")


@dataclass(frozen=True)
class KaPoint:
    kappa: float
    a: float


@dataclass(frozen=True)
class RateSample:
    v: float
    omega: float
    alpha: float
    delta_a: float


PoseLike = Union[Sequence[EgoState], np.ndarray]


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    arr = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"cannot wrap non-finite angle: {theta}")
    wrapped = arr - TWO_PI * np.ceil((arr - math.pi) / TWO_PI)
    # guard the two boundary cases that rounding can push outside
    wrapped = np.where(wrapped <= -math.pi, wrapped + TWO_PI, wrapped)
    wrapped = np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


def as_pose_array(states: PoseLike) -> np.ndarray:
    """Convert EgoStates (or an existing array) to an (n, 3) float array."""
    if isinstance(states, np.ndarray):
        arr = np.asarray(states, dtype=np.float64)
    else:
        arr = np.array([[s.x, s.y, s.yaw] for s in states], dtype=np.float64).reshape(-1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DomainError(f"pose array must have shape (n, 3), got {arr.shape}")
    return arr


def to_states(poses: np.ndarray) -> List[EgoState]:
    return [EgoState(float(x), float(y), wrap_angle(float(yaw))) for x, y, yaw in poses]


def _check_dt(dt: float) -> None:
    if not (dt > 0 and math.isfinite(dt)):
        raise DomainError(f"dt must be positive and finite, got {dt}")


def speeds_and_yaw_rates(poses: np.ndarray, dt: float):
    """Forward-difference speed and yaw rate for each consecutive pose pair."""
    disp = np.diff(poses[:, :2], axis=0)
    v = np.hypot(disp[:, 0], disp[:, 1]) / dt
    omega = wrap_angle(np.diff(poses[:, 2])) / dt
    return v, np.asarray(omega, dtype=np.float64)


def poses_to_ka(poses: np.ndarray, dt: float = DEFAULT_DT, eps: float = DEFAULT_EPS) -> np.ndarray:
    """(n+2, 3) poses -> (n, 2) array of (kappa, a)."""
    _check_dt(dt)
    if eps <= 0:
        raise DomainError(f"eps must be positive, got {eps}")
    poses = np.asarray(poses, dtype=np.float64)
    if len(poses) < 3:
        raise SizeError(f"need at least 3 poses to form a curvature/acceleration pair, got {len(poses)}")
    if not np.all(np.isfinite(poses)):
        raise DomainError("poses must be finite")
    v, omega = speeds_and_yaw_rates(poses, dt)
    kappa = omega[:-1] / np.maximum(v[:-1], eps)
    accel = np.diff(v) / dt
    return np.stack([kappa, accel], axis=1)


def states_to_ka(states: PoseLike, dt: float = DEFAULT_DT, eps: float = DEFAULT_EPS) -> List[KaPoint]:
    ka = poses_to_ka(as_pose_array(states), dt, eps)
    return [KaPoint(float(k), float(a)) for k, a in ka]


def rollout_ka(start: np.ndarray, v0: float, ka: np.ndarray, dt: float = DEFAULT_DT) -> np.ndarray:
    """
    Integrate (kappa, a) steps from a start pose.

    Position advances along the midpoint heading yaw + 0.5 * kappa * v * dt,
    which makes poses_to_ka an exact inverse whenever v >= eps. Speed is
    clamped at zero.

    Returns an (len(ka) + 1, 3) array including the start pose.
    """
    _check_dt(dt)
    ka = np.asarray(ka, dtype=np.float64).reshape(-1, 2)
    start = np.asarray(start, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(ka)) and np.all(np.isfinite(start)) and math.isfinite(v0)):
        raise DomainError("rollout inputs must be finite")

    out = np.empty((len(ka) + 1, 3), dtype=np.float64)
    out[0] = start
    x, y, yaw = start
    v = max(float(v0), 0.0)
    for i, (kappa, accel) in enumerate(ka):
        turn = kappa * v * dt
        heading = yaw + 0.5 * turn
        x += v * dt * math.cos(heading)
        y += v * dt * math.sin(heading)
        yaw = wrap_angle(yaw + turn)
        v = max(v + accel * dt, 0.0)
        out[i + 1] = (x, y, yaw)
    return out


def ka_rollout(start: EgoState, v0: float, ka: Sequence[KaPoint], dt: float = DEFAULT_DT) -> List[EgoState]:
    ka_arr = np.array([[p.kappa, p.a] for p in ka], dtype=np.float64).reshape(-1, 2)
    poses = rollout_ka(np.array([start.x, start.y, start.yaw]), v0, ka_arr, dt)
    return to_states(poses)


def rate_arrays(poses: np.ndarray, dt: float = DEFAULT_DT) -> np.ndarray:
    """(n, 3) poses -> (n-2, 4) array of (v, omega, alpha, delta_a)."""
    _check_dt(dt)
    poses = np.asarray(poses, dtype=np.float64)
    if len(poses) < 3:
        raise SizeError(f"need at least 3 poses for rate estimation, got {len(poses)}")
    v, omega = speeds_and_yaw_rates(poses, dt)
    accel = np.diff(v) / dt
    alpha = np.diff(omega) / dt
    # first sample has no predecessor acceleration
    delta_a = np.concatenate([[0.0], np.diff(accel)])
    return np.stack([v[:-1], omega[:-1], alpha, delta_a], axis=1)


def finite_diff_rates(states: PoseLike, dt: float = DEFAULT_DT) -> List[RateSample]:
    rates = rate_arrays(as_pose_array(states), dt)
    return [RateSample(*map(float, row)) for row in rates]


def speed_at(poses: np.ndarray, index: int, dt: float = DEFAULT_DT) -> float:
    """Measured speed leaving pose `index` (forward difference)."""
    dx, dy = poses[index + 1, :2] - poses[index, :2]
    return math.hypot(dx, dy) / dt
