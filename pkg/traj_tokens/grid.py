"""
Uniform scalar grid with saturating quantization.

Bins are counted as range/step (no +1): [-0.22; 0.01; 0.22] has 44 bins.
Dequantization returns bin centers.
"""

import math

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

BIN_COUNT_TOLERANCE = 1e-9


class UniformGrid(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lo: float
    step: float
    hi: float

    @model_validator(mode="after")
    def _check_bins(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and math.isfinite(self.step)):
            raise ValueError("grid bounds and step must be finite")
        if self.hi <= self.lo:
            raise ValueError(f"grid needs hi > lo, got [{self.lo}, {self.hi}]")
        if self.step <= 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        ratio = (self.hi - self.lo) / self.step
        if abs(ratio - round(ratio)) > BIN_COUNT_TOLERANCE * max(1.0, ratio):
            raise ValueError(
                f"(hi - lo) / step must be an integer, got {ratio} for [{self.lo}; {self.step}; {self.hi}]"
            )
        if round(ratio) < 1:
            raise ValueError("grid must have at least one bin")
        return self

    @property
    def bins(self) -> int:
        return int(round((self.hi - self.lo) / self.step))

    def quantize(self, x):
        """Index of the bin containing x, saturating at the edges."""
        idx = np.floor((np.asarray(x, dtype=np.float64) - self.lo) / self.step)
        idx = np.clip(idx, 0, self.bins - 1).astype(np.int64)
        return int(idx) if idx.ndim == 0 else idx

    def dequantize(self, index):
        centers = self.lo + (np.asarray(index, dtype=np.float64) + 0.5) * self.step
        return float(centers) if centers.ndim == 0 else centers

    def saturated(self, x) -> np.ndarray:
        """Mask of values lying outside [lo, hi]."""
        arr = np.asarray(x, dtype=np.float64)
        return (arr < self.lo) | (arr > self.hi)

    def label(self) -> str:
        return f"[{self.lo:g}; {self.step:g}; {self.hi:g}]"


def grid(lo: float, step: float, hi: float) -> UniformGrid:
    return UniformGrid(lo=lo, step=step, hi=hi)


def grid_quantize(g: UniformGrid, x):
    return g.quantize(x)


def grid_dequantize(g: UniformGrid, index):
    return g.dequantize(index)
