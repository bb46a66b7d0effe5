"""
Fixed-bin trajectory schemes.

FB-ka quantizes per-step (curvature, acceleration) on uniform grids and packs
the pair into one token S = i_kappa * A + i_a. FB-xy quantizes every horizon
waypoint (x, y, yaw), expressed in the current pose's frame, and packs the
triple the same way.
"""

import logging
import math
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from errors import DomainError
from kinematics import DEFAULT_DT, DEFAULT_EPS, EgoState, as_pose_array, poses_to_ka, rollout_ka, wrap_angle

from .base_scheme import Reconstruction, TrajectoryScheme
from .grid import UniformGrid

logger = logging.getLogger(__name__)


class KaGridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kappa_grid: UniformGrid
    a_grid: UniformGrid

    @property
    def codebook_size(self) -> int:
        return self.kappa_grid.bins * self.a_grid.bins


class XyGridConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    x_grid: UniformGrid
    y_grid: UniformGrid
    yaw_grid: UniformGrid

    @property
    def codebook_size(self) -> int:
        return self.x_grid.bins * self.y_grid.bins * self.yaw_grid.bins


def pack_token(i_kappa: int, i_a: int, A: int, K: Optional[int] = None) -> int:
    """S = i_kappa * A + i_a."""
    if not 0 <= i_a < A:
        raise DomainError(f"acceleration index {i_a} outside [0, {A})")
    if i_kappa < 0 or (K is not None and i_kappa >= K):
        raise DomainError(f"curvature index {i_kappa} outside [0, {K})")
    return int(i_kappa) * int(A) + int(i_a)


def unpack_token(value: int, A: int, K: Optional[int] = None) -> Tuple[int, int]:
    if value < 0 or (K is not None and value >= A * K):
        raise DomainError(f"trajectory token {value} outside [0, {A * K if K else 'inf'})")
    return int(value) // int(A), int(value) % int(A)


def pack_tokens(i_kappa: np.ndarray, i_a: np.ndarray, A: int) -> np.ndarray:
    return np.asarray(i_kappa, dtype=np.int64) * A + np.asarray(i_a, dtype=np.int64)


def unpack_tokens(values: np.ndarray, A: int) -> Tuple[np.ndarray, np.ndarray]:
    values = np.asarray(values, dtype=np.int64)
    return values // A, values % A


class FixedBinKaScheme(TrajectoryScheme):
    family = "fb-ka"

    def __init__(self, config: KaGridConfig, config_name: str = "", dt: float = DEFAULT_DT, eps: float = DEFAULT_EPS):
        super().__init__(dt, eps)
        self.config = config
        self.config_name = config_name

    @property
    def codebook_size(self) -> int:
        return self.config.codebook_size

    @property
    def n_kappa(self) -> int:
        return self.config.kappa_grid.bins

    @property
    def n_accel(self) -> int:
        return self.config.a_grid.bins

    @property
    def description(self) -> str:
        return f"kappa {self.config.kappa_grid.label()} a {self.config.a_grid.label()}"

    def encode_ka(self, ka: np.ndarray) -> Tuple[np.ndarray, int]:
        """(n, 2) continuous pairs -> (n,) tokens and the saturated sample count."""
        ka = np.asarray(ka, dtype=np.float64).reshape(-1, 2)
        kg, ag = self.config.kappa_grid, self.config.a_grid
        saturated = int(np.sum(kg.saturated(ka[:, 0]) | ag.saturated(ka[:, 1])))
        tokens = pack_tokens(kg.quantize(ka[:, 0]), ag.quantize(ka[:, 1]), ag.bins)
        return np.atleast_1d(tokens), saturated

    def decode_ka(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.atleast_1d(np.asarray(tokens, dtype=np.int64))
        if np.any(tokens < 0) or np.any(tokens >= self.codebook_size):
            raise DomainError(f"trajectory tokens must lie in [0, {self.codebook_size})")
        i_kappa, i_a = unpack_tokens(tokens, self.n_accel)
        return np.stack(
            [self.config.kappa_grid.dequantize(i_kappa), self.config.a_grid.dequantize(i_a)], axis=1
        ).reshape(-1, 2)

    def clamp_ka(self, ka: np.ndarray) -> np.ndarray:
        """Clip continuous pairs into the representable range."""
        kg, ag = self.config.kappa_grid, self.config.a_grid
        ka = np.array(ka, dtype=np.float64).reshape(-1, 2)
        ka[:, 0] = np.clip(ka[:, 0], kg.lo, kg.hi)
        ka[:, 1] = np.clip(ka[:, 1], ag.lo, ag.hi)
        return ka

    def tokenize(self, poses: np.ndarray) -> np.ndarray:
        tokens, saturated = self.encode_ka(poses_to_ka(poses, self.dt, self.eps))
        if saturated:
            logger.warning("%s: %d curvature/acceleration samples saturated", self.name, saturated)
        return tokens

    def detokenize(self, tokens: np.ndarray, start: np.ndarray, v0: float) -> np.ndarray:
        return rollout_ka(start, v0, self.decode_ka(tokens), self.dt)

    def reconstruct(self, window: np.ndarray) -> Reconstruction:
        window = np.asarray(window, dtype=np.float64)
        ka = poses_to_ka(window, self.dt, self.eps)
        tokens, saturated = self.encode_ka(ka)
        decoded = self.decode_ka(tokens)
        poses = rollout_ka(window[0], self.measured_speed(window), decoded, self.dt)[1:]
        errors = {"kappa": decoded[:, 0] - ka[:, 0], "a": decoded[:, 1] - ka[:, 1]}
        return Reconstruction(poses, saturated, errors)


def ka_tokenize(states, dt: float, config: KaGridConfig, eps: float = DEFAULT_EPS) -> np.ndarray:
    return FixedBinKaScheme(config, dt=dt, eps=eps).tokenize(as_pose_array(states))


def ka_detokenize(tokens, start: EgoState, v0: float, dt: float, config: KaGridConfig) -> np.ndarray:
    scheme = FixedBinKaScheme(config, dt=dt)
    return scheme.detokenize(tokens, np.array([start.x, start.y, start.yaw]), v0)


def to_local_frame(origin: np.ndarray, poses: np.ndarray) -> np.ndarray:
    """Express poses in the frame of `origin` (x forward, y left)."""
    c, s = math.cos(origin[2]), math.sin(origin[2])
    d = poses[:, :2] - origin[:2]
    local = np.empty_like(poses)
    local[:, 0] = c * d[:, 0] + s * d[:, 1]
    local[:, 1] = -s * d[:, 0] + c * d[:, 1]
    local[:, 2] = wrap_angle(poses[:, 2] - origin[2])
    return local


def to_global_frame(origin: np.ndarray, local: np.ndarray) -> np.ndarray:
    c, s = math.cos(origin[2]), math.sin(origin[2])
    out = np.empty_like(local)
    out[:, 0] = origin[0] + c * local[:, 0] - s * local[:, 1]
    out[:, 1] = origin[1] + s * local[:, 0] + c * local[:, 1]
    out[:, 2] = wrap_angle(local[:, 2] + origin[2])
    return out


class FixedBinXyScheme(TrajectoryScheme):
    family = "fb-xy"

    def __init__(self, config: XyGridConfig, config_name: str = "", dt: float = DEFAULT_DT, eps: float = DEFAULT_EPS):
        super().__init__(dt, eps)
        self.config = config
        self.config_name = config_name

    @property
    def codebook_size(self) -> int:
        return self.config.codebook_size

    @property
    def description(self) -> str:
        return f"xy {self.config.x_grid.label()} yaw {self.config.yaw_grid.label()}"

    def _grids(self):
        return (self.config.x_grid, self.config.y_grid, self.config.yaw_grid)

    def encode_local(self, local: np.ndarray) -> Tuple[np.ndarray, int]:
        grids = self._grids()
        indices = [g.quantize(local[:, i]) for i, g in enumerate(grids)]
        saturated = int(np.sum(np.any([g.saturated(local[:, i]) for i, g in enumerate(grids)], axis=0)))
        tokens = (indices[0] * grids[1].bins + indices[1]) * grids[2].bins + indices[2]
        return np.atleast_1d(tokens), saturated

    def decode_local(self, tokens: np.ndarray) -> np.ndarray:
        gx, gy, gyaw = self._grids()
        tokens = np.atleast_1d(np.asarray(tokens, dtype=np.int64))
        i_yaw = tokens % gyaw.bins
        rest = tokens // gyaw.bins
        i_y = rest % gy.bins
        i_x = rest // gy.bins
        return np.stack([gx.dequantize(i_x), gy.dequantize(i_y), gyaw.dequantize(i_yaw)], axis=1).reshape(-1, 3)

    def reconstruct(self, window: np.ndarray) -> Reconstruction:
        window = np.asarray(window, dtype=np.float64)
        origin, horizon = window[0], window[1:-1]
        local = to_local_frame(origin, horizon)
        tokens, saturated = self.encode_local(local)
        decoded = self.decode_local(tokens)
        errors = {
            "x": decoded[:, 0] - local[:, 0],
            "y": decoded[:, 1] - local[:, 1],
            "yaw": wrap_angle(decoded[:, 2] - local[:, 2]),
        }
        return Reconstruction(to_global_frame(origin, decoded), saturated, errors)
