"""
PDMS-style closed-loop subscores.

NC: no collision. DAC: fraction of steps inside the corridor. TTC: 1 when
the minimum time-to-collision stays above the threshold, else scaled.
C: fraction of comfort-compliant steps. EP: progress relative to the
expert on the same scene.
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Sequence

import numpy as np

from errors import DomainError
from kinematics import DEFAULT_DT, rate_arrays

from .scene import EGO_LENGTH, EGO_WIDTH, Scene

TTC_THRESHOLD = 2.0
COMFORT_MAX_DELTA_A = 0.6
COMFORT_MAX_ALPHA = 0.4

SCORE_LABEL = "pdms_style"
RESULT_COLUMNS = [
    "scene_seed",
    "difficulty",
    "policy",
    "nc",
    "dac",
    "ttc",
    "comfort",
    "ep",
    SCORE_LABEL,
    "mean_reward",
    "progress_m",
    "flagged_tokens",
]


def _unit(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def pdms(nc: float, dac: float, ttc: float, c: float, ep: float) -> float:
    """NC * DAC * (5 EP + 5 TTC + 2 C) / 12."""
    nc, dac, ttc, c, ep = (_unit(n, v) for n, v in zip(("nc", "dac", "ttc", "c", "ep"), (nc, dac, ttc, c, ep)))
    return nc * dac * (5.0 * ep + 5.0 * ttc + 2.0 * c) / 12.0


def time_to_collision(scene: Scene, pose, v: float, time: float) -> float:
    """Along-lane TTC to the nearest laterally overlapping object ahead (inf if none closes in)."""
    s_ego, l_ego = scene.centerline.project([pose[:2]])
    best = math.inf
    objects = [(b, 0.0) for b in scene.obstacles] + [(a.box(scene.centerline, time), a.speed) for a in scene.agents]
    for box, speed in objects:
        s_obj, l_obj = scene.centerline.project([[box.x, box.y]])
        if abs(l_obj[0] - l_ego[0]) >= 0.5 * (box.width + EGO_WIDTH) or s_obj[0] <= s_ego[0]:
            continue
        closing = v - speed
        if closing <= 0.0:
            continue
        gap = max(s_obj[0] - s_ego[0] - 0.5 * (box.length + EGO_LENGTH), 0.0)
        best = min(best, gap / closing)
    return best


def ttc_score(min_ttc: float, threshold: float = TTC_THRESHOLD) -> float:
    if min_ttc > threshold:
        return 1.0
    return float(max(min_ttc, 0.0) / threshold)


def comfort_score(poses: np.ndarray, dt: float = DEFAULT_DT) -> float:
    if len(poses) < 3:
        return 1.0
    rates = rate_arrays(poses, dt)
    ok = (np.abs(rates[:, 3]) <= COMFORT_MAX_DELTA_A) & (np.abs(rates[:, 2]) <= COMFORT_MAX_ALPHA)
    return float(np.mean(ok))


def progress_score(progress: float, expert_progress: float) -> float:
    if expert_progress <= 1e-6:
        return 1.0
    return float(np.clip(progress / expert_progress, 0.0, 1.0))


@dataclass
class ClosedLoopResult:
    scene_seed: int
    difficulty: str
    policy: str
    nc: float
    dac: float
    ttc: float
    comfort: float
    ep: float
    pdms_style: float
    mean_reward: float
    progress_m: float
    flagged_tokens: int = 0
    poses: np.ndarray = field(default=None, repr=False)

    def as_row(self) -> Dict:
        row = asdict(self)
        row.pop("poses")
        return row


def aggregate(results: Sequence[ClosedLoopResult]) -> Dict[str, float]:
    """Means of the numeric subscores in result order."""
    if not results:
        return {}
    keys = ["nc", "dac", "ttc", "comfort", "ep", SCORE_LABEL, "mean_reward", "progress_m", "flagged_tokens"]
    return {k: float(np.mean([getattr(r, k) for r in results])) for k in keys}


def score_rollout(
    scene: Scene,
    policy: str,
    poses: np.ndarray,
    speeds: Sequence[float],
    collisions: Sequence[bool],
    offroad: Sequence[bool],
    rewards: Sequence[float],
    expert_progress: float,
    flagged: int = 0,
    dt: float = DEFAULT_DT,
) -> ClosedLoopResult:
    """Subscores of one rollout. poses is (T + 1, 3); per-step lists have T entries."""
    poses = np.asarray(poses, dtype=np.float64)
    n_steps = len(poses) - 1
    nc = 0.0 if any(collisions) else 1.0
    dac = 1.0 - float(np.mean(offroad)) if n_steps else 1.0
    min_ttc = min(
        (time_to_collision(scene, poses[t], speeds[t], t * dt) for t in range(len(poses))), default=math.inf
    )
    s, _ = scene.centerline.project(poses[[0, -1], :2])
    progress = float(s[1] - s[0])
    ep = progress_score(progress, expert_progress)
    c = comfort_score(poses, dt)
    ttc = ttc_score(min_ttc)
    return ClosedLoopResult(
        scene.seed,
        scene.difficulty,
        policy,
        nc,
        dac,
        ttc,
        c,
        ep,
        pdms(nc, dac, ttc, c, ep),
        float(np.mean(rewards)) if len(rewards) else 0.0,
        progress,
        int(flagged),
        poses,
    )
