"""
Reconstruction-error benchmark for trajectory schemes.

Each window holds N + 2 poses; a scheme reconstructs poses 1..N and the
benchmark measures ADE / FDE / AHE over the first h seconds for every
requested horizon, with empirical quantile confidence intervals on the
per-window ADE.
"""

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

from errors import DomainError, SizeError
from kinematics import DEFAULT_DT, rollout_ka, wrap_angle
from reports import write_csv

from .base_scheme import Reconstruction, TrajectoryScheme

logger = logging.getLogger(__name__)

DEFAULT_HORIZONS_S = (1.0, 2.0, 3.0, 4.0)
DEFAULT_CI_LEVELS = (0.95, 0.99)

BENCHMARK_COLUMNS = [
    "scheme",
    "config",
    "codebook_size",
    "horizon_s",
    "ade_m",
    "fde_m",
    "ahe_rad",
    "ci_level",
    "ci_lo",
    "ci_hi",
]
ERROR_QUANTILE_COLUMNS = ["scheme", "config", "variable", "ci_level", "q_lo", "q_hi", "mean_abs"]


@dataclass
class BenchmarkResult:
    scheme: str
    config: str
    codebook_size: int
    rows: List[Dict] = field(default_factory=list)
    error_rows: List[Dict] = field(default_factory=list)
    saturated: int = 0
    n_windows: int = 0

    def ade(self, horizon_s: float) -> float:
        for row in self.rows:
            if abs(row["horizon_s"] - horizon_s) < 1e-9:
                return row["ade_m"]
        raise KeyError(f"horizon {horizon_s} not benchmarked")


def horizon_steps(horizon_s: float, dt: float) -> int:
    steps = horizon_s / dt
    if steps < 1 or abs(steps - round(steps)) > 1e-9:
        raise DomainError(f"horizon {horizon_s}s is not a positive multiple of dt={dt}")
    return int(round(steps))


def quantile_interval(values: np.ndarray, level: float):
    if not 0.0 < level < 1.0:
        raise DomainError(f"CI level must lie in (0, 1), got {level}")
    lo, hi = np.quantile(values, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    return float(lo), float(hi)


def _reconstruct(scheme: TrajectoryScheme, window: np.ndarray) -> Reconstruction:
    return scheme.reconstruct(window)


def recon_benchmark(
    windows: Sequence[np.ndarray],
    scheme: TrajectoryScheme,
    horizons_s: Sequence[float] = DEFAULT_HORIZONS_S,
    ci_levels: Sequence[float] = DEFAULT_CI_LEVELS,
    jobs: int = 1,
    show_progress: bool = False,
) -> BenchmarkResult:
    """
    Tokenize/detokenize every window and aggregate reconstruction errors.

    Results are reduced in window order regardless of `jobs`.
    """
    if len(windows) == 0:
        raise SizeError("reconstruction benchmark needs at least one window")
    steps = [horizon_steps(h, scheme.dt) for h in horizons_s]
    n_horizon = len(windows[0]) - 2
    if max(steps) > n_horizon:
        raise SizeError(f"windows hold {n_horizon} horizon steps, {max(steps)} requested")

    work = partial(_reconstruct, scheme)
    if jobs > 1:
        recons = process_map(work, windows, max_workers=jobs, chunksize=16, disable=not show_progress)
    else:
        recons = [work(w) for w in tqdm(windows, desc=scheme.name, disable=not show_progress)]

    truth = np.stack([np.asarray(w, dtype=np.float64)[1:-1] for w in windows])
    pred = np.stack([r.poses for r in recons])
    disp = np.hypot(pred[..., 0] - truth[..., 0], pred[..., 1] - truth[..., 1])
    head = np.abs(wrap_angle(pred[..., 2] - truth[..., 2]))

    result = BenchmarkResult(scheme.family, scheme.config_name, scheme.codebook_size)
    result.n_windows = len(windows)
    result.saturated = int(sum(r.saturated for r in recons))
    if result.saturated:
        logger.warning("%s: %d saturated samples over %d windows", scheme.name, result.saturated, len(windows))

    for horizon, n in zip(horizons_s, steps):
        per_window_ade = disp[:, :n].mean(axis=1)
        ade = float(per_window_ade.mean())
        fde = float(disp[:, n - 1].mean())
        ahe = float(head[:, :n].mean())
        for level in ci_levels:
            lo, hi = quantile_interval(per_window_ade, level)
            result.rows.append(
                {
                    "scheme": scheme.family,
                    "config": scheme.config_name,
                    "codebook_size": scheme.codebook_size,
                    "horizon_s": float(horizon),
                    "ade_m": ade,
                    "fde_m": fde,
                    "ahe_rad": ahe,
                    "ci_level": float(level),
                    "ci_lo": lo,
                    "ci_hi": hi,
                }
            )

    variables = recons[0].variable_errors.keys()
    for name in variables:
        errors = np.concatenate([r.variable_errors[name] for r in recons])
        for level in ci_levels:
            lo, hi = quantile_interval(errors, level)
            result.error_rows.append(
                {
                    "scheme": scheme.family,
                    "config": scheme.config_name,
                    "variable": name,
                    "ci_level": float(level),
                    "q_lo": lo,
                    "q_hi": hi,
                    "mean_abs": float(np.mean(np.abs(errors))),
                }
            )
    return result


def write_benchmark(results: Sequence[BenchmarkResult], path: str, config_hash: str = "", seed: Optional[int] = None) -> str:
    rows = [row for result in results for row in result.rows]
    return write_csv(path, BENCHMARK_COLUMNS, rows, config_hash, seed)


def write_error_quantiles(
    results: Sequence[BenchmarkResult], path: str, config_hash: str = "", seed: Optional[int] = None
) -> str:
    rows = [row for result in results for row in result.error_rows]
    return write_csv(path, ERROR_QUANTILE_COLUMNS, rows, config_hash, seed)


def slice_windows(poses: np.ndarray, horizon: int, stride: int = 1) -> List[np.ndarray]:
    """Cut a pose track into overlapping (horizon + 2, 3) windows."""
    poses = np.asarray(poses, dtype=np.float64)
    size = horizon + 2
    return [poses[i : i + size].copy() for i in range(0, len(poses) - size + 1, stride)]


def synthetic_windows(
    n_windows: int,
    horizon: int = 8,
    seed: int = 0,
    dt: float = DEFAULT_DT,
    speed_range=(6.0, 10.0),
    kappa_max: float = 0.04,
    accel_max: float = 1.0,
) -> List[np.ndarray]:
    """
    Smooth random drives: curvature and acceleration follow linear ramps plus
    a slow sinusoid, integrated from a random pose and speed.
    """
    rng = np.random.default_rng(seed)
    steps = horizon + 1
    t = np.arange(steps) * dt
    windows = []
    for _ in range(n_windows):
        k0, k1 = rng.uniform(-kappa_max, kappa_max, size=2)
        a0, a1 = rng.uniform(-accel_max, accel_max, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        span = max(t[-1], dt)
        kappa = k0 + (k1 - k0) * t / span + 0.25 * kappa_max * np.sin(t + phase)
        accel = a0 + (a1 - a0) * t / span
        ka = np.stack([np.clip(kappa, -kappa_max, kappa_max), np.clip(accel, -accel_max, accel_max)], axis=1)
        start = np.array([rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-np.pi, np.pi)])
        start[2] = wrap_angle(start[2])
        v0 = rng.uniform(*speed_range)
        windows.append(rollout_ka(start, v0, ka, dt))
    return windows
