"""
Base interface for trajectory discretization schemes.

All schemes reconstruct a horizon of future poses from a benchmark window of
N + 2 poses: pose 0 is the current pose, poses 1..N are the horizon, and the
last pose is lookahead needed by schemes working in curvature/acceleration
space (the final acceleration uses one more forward difference).
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from kinematics import DEFAULT_DT, DEFAULT_EPS, speed_at


@dataclass
class Reconstruction:
    """Reconstructed horizon poses plus per-variable signed errors."""

    poses: np.ndarray
    saturated: int = 0
    variable_errors: Dict[str, np.ndarray] = field(default_factory=dict)


class TrajectoryScheme(ABC):
    """
    Abstract trajectory tokenizer.

    Subclasses provide the codebook size and a window reconstruction; the
    benchmark only talks to this interface.
    """

    family: str = ""
    config_name: str = ""

    def __init__(self, dt: float = DEFAULT_DT, eps: float = DEFAULT_EPS):
        self.dt = dt
        self.eps = eps

    @property
    def name(self) -> str:
        return f"{self.family}-{self.config_name}" if self.config_name else self.family

    @property
    @abstractmethod
    def codebook_size(self) -> int:
        """Number of distinct token values per token."""

    @abstractmethod
    def reconstruct(self, window: np.ndarray) -> Reconstruction:
        """Tokenize then detokenize the horizon of a (N + 2, 3) window."""

    @property
    def description(self) -> str:
        return ""

    def measured_speed(self, window: np.ndarray) -> float:
        return speed_at(window, 0, self.dt)

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__}: {self.name} (codebook {self.codebook_size})>"


class IdentityScheme(TrajectoryScheme):
    """Lossless passthrough used as a zero-error reference row."""

    family = "identity"

    @property
    def codebook_size(self) -> int:
        return 0

    def reconstruct(self, window: np.ndarray) -> Reconstruction:
        horizon = np.array(window[1:-1], dtype=np.float64)
        zeros = np.zeros(len(horizon))
        return Reconstruction(horizon, 0, {"x": zeros, "y": zeros.copy(), "yaw": zeros.copy()})
