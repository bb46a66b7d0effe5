"""
BEV tokenizer: patch one-hot vectors quantized against a k-means codebook.

A semantic BEV raster (H x W class ids) is cut into patch_h x patch_w
patches; each patch becomes a one-hot flattened vector of dimension
patch_h * patch_w * n_classes and is replaced by the index of its nearest
codebook entry (squared Euclidean distance, which on one-hot vectors is twice
the Hamming distance between class patches).
"""

import logging
import os
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigurationError, DatasetIOError, DomainError, SizeError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_BEV_SIZE = 64
DEFAULT_RESOLUTION = 0.5
DEFAULT_PATCH = 8
DEFAULT_CODEBOOK_SIZE = 128
DEFAULT_N_INIT = 4
DEFAULT_MAX_ITER = 50
# two-entry codebooks over at most this many distinct patches are solved exactly
EXACT_TWO_MEANS_MAX = 12

CODEBOOK_MAGIC = b"DAPBEVQ1"
_HEADER = struct.Struct("<5I")


class BevConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    size: int = Field(DEFAULT_BEV_SIZE, ge=1)
    resolution: float = Field(DEFAULT_RESOLUTION, gt=0.0)
    patch: int = Field(DEFAULT_PATCH, ge=1)
    codebook_size: int = Field(DEFAULT_CODEBOOK_SIZE, ge=1)
    n_init: int = Field(DEFAULT_N_INIT, ge=1)
    max_iter: int = Field(DEFAULT_MAX_ITER, ge=1)

    @model_validator(mode="after")
    def _check_patch(self):
        if self.size % self.patch:
            raise ValueError(f"BEV size {self.size} is not a multiple of patch {self.patch}")
        return self

    @property
    def tokens_per_frame(self) -> int:
        return (self.size // self.patch) ** 2


class BevClass(IntEnum):
    BACKGROUND = 0
    DRIVABLE = 1
    CENTER_BAND = 2
    OBSTACLE = 3
    EGO = 4


N_CLASSES = len(BevClass)


@dataclass(frozen=True)
class BevGrid:
    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    n_classes: int = N_CLASSES

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2:
            raise SizeError(f"BEV grid must be 2-D, got shape {cells.shape}")
        if cells.size and (cells.min() < 0 or cells.max() >= self.n_classes):
            raise DomainError(f"BEV cells must be class ids in [0, {self.n_classes})")
        object.__setattr__(self, "cells", cells.astype(np.uint8))

    @property
    def shape(self):
        return self.cells.shape


@dataclass(frozen=True)
class Codebook:
    entries: np.ndarray
    patch_h: int = DEFAULT_PATCH
    patch_w: int = DEFAULT_PATCH
    n_classes: int = N_CLASSES

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 1:
            raise ConfigurationError(f"codebook needs at least one entry, got shape {entries.shape}")
        if entries.shape[1] != self.dim:
            raise ConfigurationError(
                f"codebook entries have dimension {entries.shape[1]}, patches need {self.dim}"
            )
        if not np.all(np.isfinite(entries)):
            raise ConfigurationError("codebook entries must be finite")
        object.__setattr__(self, "entries", entries)

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.patch_h * self.patch_w * self.n_classes


def patchify(grid: BevGrid, patch_h: int = DEFAULT_PATCH, patch_w: int = DEFAULT_PATCH) -> np.ndarray:
    """(H, W) class grid -> (H/ph, W/pw, ph*pw*n_classes) one-hot patch vectors."""
    H, W = grid.shape
    if patch_h < 1 or patch_w < 1 or H % patch_h or W % patch_w:
        raise SizeError(f"grid {H}x{W} is not divisible into {patch_h}x{patch_w} patches")
    h, w = H // patch_h, W // patch_w
    onehot = np.eye(grid.n_classes, dtype=np.float64)[grid.cells]
    blocks = onehot.reshape(h, patch_h, w, patch_w, grid.n_classes).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(h, w, patch_h * patch_w * grid.n_classes)


def unpatchify(vectors: np.ndarray, patch_h: int, patch_w: int, n_classes: int = N_CLASSES,
               resolution: float = DEFAULT_RESOLUTION) -> BevGrid:
    """Inverse of patchify; each cell takes the argmax class of its block."""
    h, w, d = vectors.shape
    if d != patch_h * patch_w * n_classes:
        raise ConfigurationError(f"vector dimension {d} does not match {patch_h}x{patch_w}x{n_classes}")
    blocks = vectors.reshape(h, w, patch_h, patch_w, n_classes).transpose(0, 2, 1, 3, 4)
    cells = np.argmax(blocks.reshape(h * patch_h, w * patch_w, n_classes), axis=-1)
    return BevGrid(cells, resolution, n_classes)


def _sq_distances(z: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """(n, d) x (K, d) -> (n, K) squared distances; identical entries give identical columns."""
    cross = z @ entries.T
    dist = np.sum(z * z, axis=1)[:, None] - 2.0 * cross + np.sum(entries * entries, axis=1)[None, :]
    return np.maximum(dist, 0.0)


def _kmeans_pp(data: np.ndarray, weights: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    first = int(rng.choice(len(data), p=weights / weights.sum()))
    centers = [data[first]]
    closest = _sq_distances(data, data[first : first + 1])[:, 0]
    for _ in range(1, K):
        mass = weights * closest
        total = mass.sum()
        if total <= 0:
            idx = int(rng.integers(len(data)))
        else:
            idx = int(rng.choice(len(data), p=mass / total))
        centers.append(data[idx])
        closest = np.minimum(closest, _sq_distances(data, data[idx : idx + 1])[:, 0])
    return np.stack(centers)


def _lloyd(data: np.ndarray, weights: np.ndarray, centers: np.ndarray, max_iter: int):
    K = len(centers)
    for _ in range(max_iter):
        dist = _sq_distances(data, centers)
        labels = np.argmin(dist, axis=1)
        mass = np.bincount(labels, weights=weights, minlength=K)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, data * weights[:, None])
        new_centers = centers.copy()
        filled = mass > 0
        new_centers[filled] = sums[filled] / mass[filled, None]
        if not np.all(filled):
            # empty clusters move to the currently worst-served points
            point_cost = dist[np.arange(len(data)), labels]
            order = np.argsort(-point_cost, kind="stable")
            for k, far in zip(np.flatnonzero(~filled), order):
                new_centers[k] = data[far]
        if np.array_equal(new_centers, centers):
            break
        centers = new_centers
    dist = _sq_distances(data, centers)
    labels = np.argmin(dist, axis=1)
    inertia = float(np.sum(weights * dist[np.arange(len(data)), labels]))
    return centers, inertia


def _exact_two_means(data: np.ndarray, weights: np.ndarray):
    """Optimal weighted 2-partition by enumeration; point 0 always sits in the first cluster."""
    n = len(data)
    masks = (np.arange(1, 2 ** (n - 1))[:, None] >> np.arange(n - 1)[None, :]) & 1
    in_second = np.concatenate([np.zeros((len(masks), 1)), masks], axis=1)
    in_first = 1.0 - in_second
    wx = data * weights[:, None]
    total_sq = float(np.sum(weights * np.sum(data * data, axis=1)))
    inertia = np.full(len(masks), total_sq)
    sums = []
    for member in (in_first, in_second):
        mass = member @ weights
        s = member @ wx
        inertia -= np.sum(s * s, axis=1) / mass
        sums.append(s / mass[:, None])
    best = int(np.argmin(inertia))
    centers = np.stack([sums[0][best], sums[1][best]])
    return centers, max(float(inertia[best]), 0.0)


def fit_codebook(
    vectors: np.ndarray,
    K: int = DEFAULT_CODEBOOK_SIZE,
    seed: int = 0,
    patch_h: int = DEFAULT_PATCH,
    patch_w: int = DEFAULT_PATCH,
    n_classes: int = N_CLASSES,
    n_init: int = DEFAULT_N_INIT,
    max_iter: int = DEFAULT_MAX_ITER,
) -> Codebook:
    """
    k-means codebook with k-means++ seeding and `n_init` restarts.

    Patches repeat heavily, so identical vectors are merged and clustered
    with multiplicity weights; the objective is unchanged. Deterministic given
    (vectors, seed); the lowest-inertia restart wins. Two-entry codebooks over
    at most EXACT_TWO_MEANS_MAX distinct patches are solved exactly instead.
    """
    data = np.asarray(vectors, dtype=np.float64).reshape(-1, patch_h * patch_w * n_classes)
    if K < 1:
        raise ConfigurationError(f"codebook size must be >= 1, got {K}")
    if K > len(data):
        raise ConfigurationError(f"codebook size {K} exceeds sample count {len(data)}")
    unique, counts = np.unique(data, axis=0, return_counts=True)
    weights = counts.astype(np.float64)
    rng = np.random.default_rng(seed)
    best = None
    restarts = max(1, n_init)
    if K == 2 and 2 <= len(unique) <= EXACT_TWO_MEANS_MAX:
        best = _exact_two_means(unique, weights)
        restarts = 0
    for _ in range(restarts):
        centers, inertia = _lloyd(unique, weights, _kmeans_pp(unique, weights, K, rng), max_iter)
        if best is None or inertia < best[1]:
            best = (centers, inertia)
    logger.info(
        "fitted BEV codebook K=%d on %d patches (%d distinct), inertia %.3f", K, len(data), len(unique), best[1]
    )
    return Codebook(best[0], patch_h, patch_w, n_classes)


def encode(grid: BevGrid, codebook: Codebook) -> np.ndarray:
    """Nearest-entry index per patch; ties go to the lowest index."""
    if grid.n_classes != codebook.n_classes:
        raise ConfigurationError(f"grid has {grid.n_classes} classes, codebook {codebook.n_classes}")
    z = patchify(grid, codebook.patch_h, codebook.patch_w)
    h, w, d = z.shape
    if d != codebook.dim:
        raise ConfigurationError(f"patch dimension {d} does not match codebook dimension {codebook.dim}")
    return np.argmin(_sq_distances(z.reshape(-1, d), codebook.entries), axis=1).reshape(h, w)


def decode(tokens: np.ndarray, codebook: Codebook, resolution: float = DEFAULT_RESOLUTION) -> BevGrid:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 2:
        raise SizeError(f"BEV token grid must be 2-D, got shape {tokens.shape}")
    if tokens.size and (tokens.min() < 0 or tokens.max() >= codebook.K):
        raise DomainError(f"BEV tokens must lie in [0, {codebook.K})")
    vectors = codebook.entries[tokens]
    return unpatchify(vectors, codebook.patch_h, codebook.patch_w, codebook.n_classes, resolution)


def reconstruction_accuracy(grid: BevGrid, codebook: Codebook) -> float:
    """Fraction of cells whose class survives encode -> decode."""
    recon = decode(encode(grid, codebook), codebook, grid.resolution)
    return float(np.mean(recon.cells == grid.cells))


def save_codebook(codebook: Codebook, path: str) -> str:
    header = _HEADER.pack(codebook.K, codebook.dim, codebook.patch_h, codebook.patch_w, codebook.n_classes)
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as f:
            f.write(CODEBOOK_MAGIC)
            f.write(header)
            f.write(codebook.entries.astype("<f4").tobytes(order="C"))
    except OSError as e:
        raise DatasetIOError(f"cannot write codebook: {e}", path) from e
    return path


def load_codebook(path: str, expected_k: Optional[int] = None) -> Codebook:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DatasetIOError(f"cannot read codebook: {e}", path) from e
    if not blob.startswith(CODEBOOK_MAGIC):
        raise ValidationError(f"{path} is not a BEV codebook file")
    offset = len(CODEBOOK_MAGIC)
    K, d, ph, pw, n_classes = _HEADER.unpack_from(blob, offset)
    offset += _HEADER.size
    if len(blob) - offset != K * d * 4:
        raise ValidationError(f"{path}: codebook payload size does not match header")
    if expected_k is not None and K != expected_k:
        raise ValidationError(f"{path}: codebook has K={K}, configuration expects {expected_k}")
    entries = np.frombuffer(blob, dtype="<f4", offset=offset).reshape(K, d).astype(np.float64)
    return Codebook(entries, ph, pw, n_classes)


def fit_from_grids(grids, config: BevConfig, seed: int = 0) -> Codebook:
    """Codebook over every patch of the given rasters."""
    grids = list(grids)
    if not grids:
        raise SizeError("no BEV rasters to fit a codebook on")
    vectors = np.concatenate([patchify(g, config.patch, config.patch).reshape(-1, config.patch**2 * g.n_classes) for g in grids])
    return fit_codebook(vectors, config.codebook_size, seed, config.patch, config.patch, grids[0].n_classes,
                        config.n_init, config.max_iter)
