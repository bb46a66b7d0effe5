"""
DCT-coefficient trajectory codec.

A whole horizon is transformed per channel with the orthonormal type-II DCT,
every coefficient is quantized with step q into L levels, and coefficient k of
all channels is packed into token k. The per-token vocabulary is therefore the
product of the channel level counts.

This codec is global in time, so it is benchmarked only; the planner uses
FB-ka tokens.
"""

import logging
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.fft import dct, idct

from errors import DomainError, SizeError
from kinematics import DEFAULT_DT, DEFAULT_EPS, poses_to_ka, rollout_ka

from .base_scheme import Reconstruction, TrajectoryScheme
from .fixed_bin import to_global_frame, to_local_frame

logger = logging.getLogger(__name__)

DEFAULT_DCT_HORIZON = 8


def dct_forward(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.size < 1:
        raise SizeError("DCT needs at least one sample")
    return dct(seq, type=2, norm="ortho")


def dct_inverse(coeffs) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.size < 1:
        raise SizeError("inverse DCT needs at least one coefficient")
    return idct(coeffs, type=2, norm="ortho")


def _check_levels(q: float, L: int) -> None:
    if q <= 0:
        raise DomainError(f"DCT quantization step must be positive, got {q}")
    if L < 2 or L % 2:
        raise DomainError(f"DCT level count must be even and >= 2, got {L}")


def dct_quantize(coeffs, q: float, L: int) -> np.ndarray:
    """Signed indices clamp(round(c / q), -L/2, L/2 - 1)."""
    _check_levels(q, L)
    idx = np.rint(np.asarray(coeffs, dtype=np.float64) / q)
    return np.clip(idx, -L // 2, L // 2 - 1).astype(np.int64)


def dct_dequantize(indices, q: float, L: int) -> np.ndarray:
    _check_levels(q, L)
    return np.asarray(indices, dtype=np.float64) * q


class DctChannel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    q: float
    L: int

    @field_validator("q")
    @classmethod
    def _positive_step(cls, value: float) -> float:
        if value <= 0:
            raise ValueError(f"q must be positive, got {value}")
        return value

    @field_validator("L")
    @classmethod
    def _even_levels(cls, value: int) -> int:
        if value < 2 or value % 2:
            raise ValueError(f"L must be even and >= 2, got {value}")
        return value

    @property
    def representable_range(self) -> Tuple[float, float]:
        return (-(self.L // 2) * self.q, (self.L // 2 - 1) * self.q)


class DctConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    channels: List[DctChannel]
    horizon: int = DEFAULT_DCT_HORIZON

    @field_validator("channels")
    @classmethod
    def _known_channels(cls, value: List[DctChannel]) -> List[DctChannel]:
        names = tuple(c.name for c in value)
        if names not in (("x", "y", "yaw"), ("kappa", "a")):
            raise ValueError(f"DCT channels must be (x, y, yaw) or (kappa, a), got {names}")
        return value

    @property
    def space(self) -> str:
        return "xy" if len(self.channels) == 3 else "ka"

    @property
    def codebook_size(self) -> int:
        size = 1
        for channel in self.channels:
            size *= channel.L
        return size


def pack_coefficients(indices: np.ndarray, levels: List[int]) -> np.ndarray:
    """(n_channels, H) signed indices -> (H,) interleaved tokens."""
    tokens = np.zeros(indices.shape[1], dtype=np.int64)
    for row, L in zip(indices, levels):
        tokens = tokens * L + (row + L // 2)
    return tokens


def unpack_coefficients(tokens: np.ndarray, levels: List[int]) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64).copy()
    rows = []
    for L in reversed(levels):
        rows.append(tokens % L - L // 2)
        tokens //= L
    return np.stack(rows[::-1])


class DctScheme(TrajectoryScheme):
    def __init__(self, config: DctConfig, config_name: str = "", dt: float = DEFAULT_DT, eps: float = DEFAULT_EPS):
        super().__init__(dt, eps)
        self.config = config
        self.config_name = config_name
        self.family = f"dct-{config.space}"

    @property
    def codebook_size(self) -> int:
        return self.config.codebook_size

    @property
    def description(self) -> str:
        return " ".join(f"{c.name} q={c.q:g} L={c.L}" for c in self.config.channels)

    def encode_signals(self, signals: np.ndarray) -> Tuple[np.ndarray, int]:
        """(n_channels, H) signals -> (H,) tokens and the saturated coefficient count."""
        saturated = 0
        indices = []
        for channel, signal in zip(self.config.channels, signals):
            coeffs = dct_forward(signal)
            lo, hi = channel.representable_range
            saturated += int(np.sum((coeffs < lo - channel.q / 2) | (coeffs > hi + channel.q / 2)))
            indices.append(dct_quantize(coeffs, channel.q, channel.L))
        levels = [c.L for c in self.config.channels]
        return pack_coefficients(np.stack(indices), levels), saturated

    def decode_signals(self, tokens: np.ndarray) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if np.any(tokens < 0) or np.any(tokens >= self.codebook_size):
            raise DomainError(f"DCT tokens must lie in [0, {self.codebook_size})")
        indices = unpack_coefficients(tokens, [c.L for c in self.config.channels])
        return np.stack(
            [dct_inverse(dct_dequantize(row, c.q, c.L)) for row, c in zip(indices, self.config.channels)]
        )

    def _roundtrip(self, signals: np.ndarray) -> Tuple[np.ndarray, int]:
        tokens, saturated = self.encode_signals(signals)
        return self.decode_signals(tokens), saturated

    def reconstruct(self, window: np.ndarray) -> Reconstruction:
        window = np.asarray(window, dtype=np.float64)
        if self.config.space == "ka":
            ka = poses_to_ka(window, self.dt, self.eps)
            decoded, saturated = self._roundtrip(ka.T)
            poses = rollout_ka(window[0], self.measured_speed(window), decoded.T, self.dt)[1:]
            errors: Dict[str, np.ndarray] = {
                "kappa": decoded[0] - ka[:, 0],
                "a": decoded[1] - ka[:, 1],
            }
            return Reconstruction(poses, saturated, errors)

        origin = window[0]
        local = to_local_frame(origin, window[1:-1])
        # unwrap relative yaw (starting from 0 at the origin) before the transform
        local[:, 2] = np.unwrap(np.concatenate([[0.0], local[:, 2]]))[1:]
        decoded, saturated = self._roundtrip(local.T)
        decoded_local = decoded.T
        errors = {
            "x": decoded_local[:, 0] - local[:, 0],
            "y": decoded_local[:, 1] - local[:, 1],
            "yaw": decoded_local[:, 2] - local[:, 2],
        }
        return Reconstruction(to_global_frame(origin, decoded_local), saturated, errors)
