"""
Closed-loop and open-loop evaluation.

Closed loop: a DrivingPolicy drives the ego through a scene for a fixed
number of steps and the rollout is scored with the PDMS-style subscores.
Open loop: the planner continues logged episodes from teacher-forced
context; decoded futures are compared with the logged continuation.
"""

import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

from bev_quantizer import BevConfig, Codebook
from errors import SizeError
from kinematics import KaPoint, wrap_angle
from offline_rl.rewards import RewardWeights
from planner.generation import generate, next_traj_token
from planner.model import PlannerTransformer
from planner.sequence import build_sequence
from posttune import LaneLikelihoodMap, SmootherWeights, posttune_pipeline
from traj_tokens.benchmark import DEFAULT_HORIZONS_S, horizon_steps
from traj_tokens.fixed_bin import FixedBinKaScheme, to_global_frame, to_local_frame
from traj_tokens.vocab import Modality

from .dataset import Episode, frame_rewards, tokenize_episode
from .metrics import ClosedLoopResult, aggregate, score_rollout
from .policies import DrivingPolicy, ExpertPolicy, Observation, local_reference
from .raster import clearance_cap, hold_position, rasterize_bev, step
from .scene import DEFAULT_ROUTE_LENGTH, Scene, route_command

logger = logging.getLogger(__name__)

DEFAULT_EVAL_STEPS = 40
DEFAULT_WINDOW_STRIDE = 4

OPEN_LOOP_COLUMNS = ["horizon_s", "n_windows", "ade_m", "fde_m", "ahe_rad"]
REFINED_COLUMNS = ["ade_refined_m", "fde_refined_m", "ahe_refined_rad"]


@dataclass
class Rollout:
    poses: np.ndarray
    speeds: List[float]
    collisions: List[bool] = field(default_factory=list)
    offroad: List[bool] = field(default_factory=list)
    flagged: int = 0


def rollout(
    scene: Scene,
    policy: DrivingPolicy,
    scheme: FixedBinKaScheme,
    steps: int = DEFAULT_EVAL_STEPS,
    bev: BevConfig = BevConfig(),
) -> Rollout:
    """
    Drive `steps` transitions. Tokens outside the scheme's codebook are
    executed as an in-place action and counted as flagged.
    """
    dt = scheme.dt
    policy.reset(scene)
    pose, v = scene.ego_start(), float(scene.spawn_speed)
    poses, speeds = [pose], [v]
    out = Rollout(np.empty((0, 3)), speeds)
    for t in range(steps):
        time = t * dt
        raster = rasterize_bev(scene, pose, time, bev.size, bev.resolution) if policy.needs_bev else None
        action = policy.act(Observation(scene, pose, v, time, route_command(scene, pose, time), raster))
        if action.ka is not None:
            result = step(scene, pose, v, action.ka, dt, time)
        elif action.token is not None and 0 <= action.token < scheme.codebook_size:
            kappa, a = scheme.decode_ka([action.token])[0]
            result = step(scene, pose, v, KaPoint(float(kappa), float(a)), dt, time)
        else:
            out.flagged += 1
            result = hold_position(scene, pose, time, dt)
        pose, v = result.pose, result.v
        poses.append(pose)
        speeds.append(v)
        out.collisions.append(result.collision)
        out.offroad.append(result.offroad)
    if out.flagged:
        logger.warning("%s on scene %d: %d out-of-range token(s) held in place", policy.name, scene.seed, out.flagged)
    out.poses = np.asarray(poses, dtype=np.float64)
    return out


def expert_progress(scene: Scene, scheme: FixedBinKaScheme, steps: int = DEFAULT_EVAL_STEPS) -> float:
    """Arc length the quantized expert covers on the scene."""
    poses = rollout(scene, ExpertPolicy(scheme), scheme, steps).poses
    s, _ = scene.centerline.project(poses[[0, -1], :2])
    return float(s[1] - s[0])


def run_episode(
    scene: Scene,
    policy: DrivingPolicy,
    scheme: FixedBinKaScheme,
    steps: int = DEFAULT_EVAL_STEPS,
    bev: BevConfig = BevConfig(),
    weights: RewardWeights = RewardWeights(),
    reference_progress: Optional[float] = None,
) -> ClosedLoopResult:
    run = rollout(scene, policy, scheme, steps, bev)
    if reference_progress is None:
        reference_progress = expert_progress(scene, scheme, steps)
    _, _, _, totals = frame_rewards(scene, run.poses, scheme.dt, weights, clearance_cap(bev.size, bev.resolution))
    return score_rollout(
        scene,
        policy.name,
        run.poses,
        run.speeds,
        run.collisions,
        run.offroad,
        totals[1:],
        reference_progress,
        run.flagged,
        scheme.dt,
    )


def closed_loop_eval(
    policy: DrivingPolicy,
    scenes: Sequence[Scene],
    scheme: FixedBinKaScheme,
    steps: int = DEFAULT_EVAL_STEPS,
    bev: BevConfig = BevConfig(),
    weights: RewardWeights = RewardWeights(),
    jobs: int = 1,
    show_progress: bool = False,
) -> Tuple[List[ClosedLoopResult], Dict[str, float]]:
    """Per-scene results in scene order plus their means."""
    work = partial(run_episode, policy=policy, scheme=scheme, steps=steps, bev=bev, weights=weights)
    scenes = list(scenes)
    if jobs > 1 and len(scenes) > 1:
        results = process_map(work, scenes, max_workers=jobs, chunksize=1, disable=not show_progress)
    else:
        results = [work(scene) for scene in tqdm(scenes, desc=policy.name, disable=not show_progress)]
    return results, aggregate(results)


# ---------------------------------------------------------------------------
# Open loop
# ---------------------------------------------------------------------------


@dataclass
class OpenLoopWindow:
    predicted: np.ndarray  # (N, 3) global poses
    reference: np.ndarray  # (N, 3) logged poses
    refined: Optional[np.ndarray] = None


def _errors(pred: np.ndarray, ref: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    disp = np.hypot(pred[:, 0] - ref[:, 0], pred[:, 1] - ref[:, 1])
    head = np.abs(wrap_angle(pred[:, 2] - ref[:, 2]))
    return disp, head


def predict_tokens(model: PlannerTransformer, ep_tokens, t: int, n: int, mode: str = "greedy", seed: int = 0) -> List[int]:
    """n trajectory tokens for frames t..t+n-1 from the teacher-forced context ending at frame t's BEV."""
    config = model.config
    H, M = config.history, config.bev_tokens_per_frame
    frames = slice(t - H, t + 1)
    bev = ep_tokens.bev[frames][:, :M] if M else np.zeros((H + 1, 0), dtype=np.int64)
    ids = build_sequence(config.vocab, int(ep_tokens.commands[t]), bev, ep_tokens.traj_exec[frames]).ids
    prefix = list(ids[:-1])
    first = next_traj_token(model, prefix, mode)
    if n <= 1:
        return [first]
    context = prefix + [first + config.vocab.offset(Modality.TRAJ)]
    return [first] + generate(model, context, n - 1, mode, seed=seed).traj_tokens


def refine_prediction(episode: Episode, t: int, predicted: np.ndarray, bev: BevConfig, weights: SmootherWeights,
                      route_length: float = DEFAULT_ROUTE_LENGTH) -> np.ndarray:
    """Post-tune a global (N, 3) prediction with the frame-t raster and the local centerline."""
    origin = episode.poses[t]
    local = to_local_frame(origin, predicted)
    lane_map = LaneLikelihoodMap.from_bev_raster(episode.bev[t], bev.resolution)
    reference = local_reference(episode.scene(route_length), origin)
    refined = posttune_pipeline(local, lane_map, reference, weights, initial_yaw=0.0)
    return to_global_frame(origin, refined.poses)


def open_loop_windows(
    model: Optional[PlannerTransformer],
    episodes: Sequence[Episode],
    codebook: Optional[Codebook],
    scheme: FixedBinKaScheme,
    n_steps: int,
    stride: int = DEFAULT_WINDOW_STRIDE,
    replay: bool = False,
    posttune: Optional[SmootherWeights] = None,
    bev: BevConfig = BevConfig(),
    route_length: float = DEFAULT_ROUTE_LENGTH,
) -> List[OpenLoopWindow]:
    """
    Every stride-th frame t with full history and n_steps logged frames ahead.
    replay decodes the logged executed tokens instead of querying the model.
    """
    H = model.config.history if model is not None else 0
    M = model.config.bev_tokens_per_frame if model is not None else 0
    windows = []
    for ep in episodes:
        tokens = tokenize_episode(ep, codebook, M) if not replay else None
        for t in range(H, ep.n_steps - n_steps + 1, max(1, stride)):
            if replay:
                predicted_tokens = ep.token_exec[t : t + n_steps]
            else:
                predicted_tokens = predict_tokens(model, tokens, t, n_steps, seed=int(ep.scene_seed) * 1000 + t)
            predicted = scheme.detokenize(np.asarray(predicted_tokens), ep.poses[t], float(ep.speeds[t]))[1:]
            window = OpenLoopWindow(predicted, ep.poses[t + 1 : t + 1 + n_steps])
            if posttune is not None:
                window.refined = refine_prediction(ep, t, predicted, bev, posttune, route_length)
            windows.append(window)
    return windows


def open_loop_eval(
    model: Optional[PlannerTransformer],
    episodes: Sequence[Episode],
    codebook: Optional[Codebook],
    scheme: FixedBinKaScheme,
    horizons_s: Sequence[float] = DEFAULT_HORIZONS_S,
    stride: int = DEFAULT_WINDOW_STRIDE,
    replay: bool = False,
    posttune: Optional[SmootherWeights] = None,
    bev: BevConfig = BevConfig(),
    route_length: float = DEFAULT_ROUTE_LENGTH,
) -> List[Dict]:
    """One ADE/FDE/AHE row per horizon; refined columns are added when posttune is given."""
    if len(episodes) == 0:
        raise SizeError("open-loop evaluation needs at least one episode")
    if not horizons_s:
        raise SizeError("open-loop evaluation needs at least one horizon")
    steps = [horizon_steps(h, scheme.dt) for h in horizons_s]
    windows = open_loop_windows(model, episodes, codebook, scheme, max(steps), stride, replay, posttune, bev, route_length)
    if not windows:
        raise SizeError(f"episodes are too short for a {max(horizons_s)} s horizon")

    raw = [_errors(w.predicted, w.reference) for w in windows]
    refined = [_errors(w.refined, w.reference) for w in windows] if posttune is not None else None
    rows = []
    for horizon, n in zip(horizons_s, steps):
        row = {
            "horizon_s": float(horizon),
            "n_windows": len(windows),
            "ade_m": float(np.mean([d[:n].mean() for d, _ in raw])),
            "fde_m": float(np.mean([d[n - 1] for d, _ in raw])),
            "ahe_rad": float(np.mean([h[:n].mean() for _, h in raw])),
        }
        if refined is not None:
            row["ade_refined_m"] = float(np.mean([d[:n].mean() for d, _ in refined]))
            row["fde_refined_m"] = float(np.mean([d[n - 1] for d, _ in refined]))
            row["ahe_refined_rad"] = float(np.mean([h[:n].mean() for _, h in refined]))
        rows.append(row)
    return rows
