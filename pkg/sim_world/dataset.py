"""
Expert demonstration episodes: simulation, on-disk format and tokenization.

Layout of a dataset directory:

    manifest.json                 episode list, seeds, split, config hash
    episodes/ep_00000.jsonl       scene header line, then one line per frame

Frame lines carry the pose, speed, command, reward components, executed
and expert actions and a run-length-encoded BEV class grid. The last frame
of an episode has no action.
"""

import json
import logging
import os
from dataclasses import dataclass
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

from bev_quantizer import BevConfig, BevGrid, Codebook, encode
from errors import DatasetIOError, ValidationError
from kinematics import KaPoint, rate_arrays
from offline_rl.rewards import RewardWeights, frame_components, reward_total
from planner.sequence import EpisodeTokens
from reports import read_json, write_json
from traj_tokens import get_scheme
from traj_tokens.fixed_bin import FixedBinKaScheme, pack_token, unpack_token

from .expert import CRUISE_SPEED, expert_policy
from .raster import clearance_cap, distances, rasterize_bev, step
from .scene import DEFAULT_ROUTE_LENGTH, DIFFICULTIES, Scene, build_scene, route_command

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
EPISODE_DIR = "episodes"
FORMAT_TAG = "dap-episodes/1"

DEFAULT_N_EPISODES = 200
DEFAULT_EPISODE_STEPS = 40
DEFAULT_BEHAVIOR_NOISE = 0.1
DEFAULT_HELDOUT_FRACTION = 0.2


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_episodes: int = Field(DEFAULT_N_EPISODES, ge=0)
    episode_steps: int = Field(DEFAULT_EPISODE_STEPS, ge=1)
    dt: float = Field(0.5, gt=0.0)
    difficulties: List[str] = ["easy", "medium", "hard"]
    behavior_noise: float = Field(DEFAULT_BEHAVIOR_NOISE, ge=0.0, le=1.0)
    heldout_fraction: float = Field(DEFAULT_HELDOUT_FRACTION, ge=0.0, le=1.0)
    route_length: float = Field(DEFAULT_ROUTE_LENGTH, gt=0.0)
    cruise_speed: float = Field(CRUISE_SPEED, gt=0.0)
    scheme: str = "fb-ka-A"

    @field_validator("difficulties")
    @classmethod
    def _known(cls, value: List[str]) -> List[str]:
        unknown = [d for d in value if d not in DIFFICULTIES]
        if unknown or not value:
            raise ValueError(f"difficulties must be a non-empty subset of {sorted(DIFFICULTIES)}, got {value}")
        return value


@dataclass
class Episode:
    scene_seed: int
    difficulty: str
    dt: float
    poses: np.ndarray  # (T + 1, 3)
    speeds: np.ndarray  # (T + 1,)
    commands: np.ndarray  # (T + 1,)
    ka_exec: np.ndarray  # (T, 2)
    ka_expert: np.ndarray  # (T, 2)
    token_exec: np.ndarray  # (T,)
    token_expert: np.ndarray  # (T,)
    d_ctr: np.ndarray
    d_clr: np.ndarray
    reward_components: np.ndarray  # (T + 1, 3): r_ctr, r_clr, r_comf
    rewards: np.ndarray  # (T + 1,)
    bev: np.ndarray  # (T + 1, S, S) uint8

    @property
    def n_steps(self) -> int:
        return len(self.token_exec)

    def scene(self, route_length: float = DEFAULT_ROUTE_LENGTH) -> Scene:
        return build_scene(self.scene_seed, self.difficulty, route_length)


# ---------------------------------------------------------------------------
# Rewards
# ---------------------------------------------------------------------------


def frame_rewards(scene: Scene, poses: np.ndarray, dt: float, weights: RewardWeights = RewardWeights(),
                  cap: Optional[float] = None):
    """
    Per-frame (d_ctr, d_clr, components, totals) recomputed from poses.

    Comfort at frame t uses the rate sample ending at t (poses t-2..t),
    clamped to the available samples; speed is the displacement leaving t.
    """
    poses = np.asarray(poses, dtype=np.float64)
    n = len(poses)
    d = np.array([distances(scene, poses[t], t * dt, cap) for t in range(n)]).reshape(n, 2)
    rates = rate_arrays(poses, dt) if n >= 3 else np.zeros((1, 4))
    disp = np.hypot(*np.diff(poses[:, :2], axis=0).T) / dt if n >= 2 else np.zeros(1)
    speed = np.concatenate([disp, disp[-1:]]) if n >= 2 else np.zeros(n)
    comps = np.zeros((n, 3))
    totals = np.zeros(n)
    for t in range(n):
        i = int(np.clip(t - 2, 0, len(rates) - 1))
        c = frame_components(d[t, 0], d[t, 1], rates[i, 3], rates[i, 2], speed[t], weights)
        comps[t] = (c.r_ctr, c.r_clr, c.r_comf)
        totals[t] = reward_total(c, weights)
    return d[:, 0], d[:, 1], comps, totals


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def perturb_token(token: int, scheme: FixedBinKaScheme, rng: np.random.Generator) -> int:
    """Shift a token by one bin in kappa and/or a, staying on the grid."""
    i_k, i_a = unpack_token(int(token), scheme.n_accel)
    which = int(rng.integers(3))
    if which in (0, 2):
        i_k = int(np.clip(i_k + rng.choice([-1, 1]), 0, scheme.n_kappa - 1))
    if which in (1, 2):
        i_a = int(np.clip(i_a + rng.choice([-1, 1]), 0, scheme.n_accel - 1))
    return pack_token(i_k, i_a, scheme.n_accel)


def simulate_episode(
    scene_seed: int,
    difficulty: str,
    config: SimConfig = SimConfig(),
    bev: BevConfig = BevConfig(),
    weights: RewardWeights = RewardWeights(),
) -> Episode:
    scheme = get_scheme(config.scheme, dt=config.dt)
    scene = build_scene(scene_seed, difficulty, config.route_length)
    rng = np.random.default_rng([scene_seed, 7919])
    T, dt = config.episode_steps, config.dt

    poses = np.zeros((T + 1, 3))
    speeds = np.zeros(T + 1)
    commands = np.zeros(T + 1, dtype=np.int64)
    rasters = np.zeros((T + 1, bev.size, bev.size), dtype=np.uint8)
    ka_exec = np.zeros((T, 2))
    ka_expert = np.zeros((T, 2))
    tok_exec = np.zeros(T, dtype=np.int64)
    tok_expert = np.zeros(T, dtype=np.int64)

    pose, v = scene.ego_start(), scene.spawn_speed
    for t in range(T + 1):
        time = t * dt
        poses[t], speeds[t] = pose, v
        commands[t] = route_command(scene, pose, time)
        rasters[t] = rasterize_bev(scene, pose, time, bev.size, bev.resolution).cells
        if t == T:
            break
        expert = expert_policy(scene, pose, v, time, config.cruise_speed)
        ka_expert[t] = (expert.action.kappa, expert.action.a)
        tok_expert[t] = int(scheme.encode_ka(ka_expert[t])[0][0])
        tok_exec[t] = tok_expert[t]
        if config.behavior_noise > 0 and rng.random() < config.behavior_noise:
            tok_exec[t] = perturb_token(tok_expert[t], scheme, rng)
        ka_exec[t] = scheme.decode_ka([tok_exec[t]])[0]
        result = step(scene, pose, v, KaPoint(float(ka_exec[t, 0]), float(ka_exec[t, 1])), dt, time)
        pose, v = result.pose, result.v

    d_ctr, d_clr, comps, totals = frame_rewards(scene, poses, dt, weights, clearance_cap(bev.size, bev.resolution))
    return Episode(scene_seed, difficulty, dt, poses, speeds, commands, ka_exec, ka_expert, tok_exec, tok_expert,
                   d_ctr, d_clr, comps, totals, rasters)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def rle_encode(cells: np.ndarray) -> List[int]:
    """Flat [value, count, value, count, ...] runs of the C-order raster."""
    flat = np.asarray(cells).reshape(-1)
    if flat.size == 0:
        return []
    change = np.flatnonzero(np.diff(flat)) + 1
    starts = np.concatenate([[0], change])
    counts = np.diff(np.concatenate([starts, [flat.size]]))
    return np.column_stack([flat[starts], counts]).reshape(-1).astype(int).tolist()


def rle_decode(runs: Sequence[int], shape) -> np.ndarray:
    runs = np.asarray(runs, dtype=np.int64).reshape(-1, 2)
    flat = np.repeat(runs[:, 0], runs[:, 1]).astype(np.uint8)
    if flat.size != int(np.prod(shape)):
        raise ValidationError(f"run-length data covers {flat.size} cells, expected {int(np.prod(shape))}")
    return flat.reshape(shape)


def _dumps(record: Dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def episode_lines(ep: Episode) -> List[str]:
    header = {
        "kind": "scene",
        "scene_seed": int(ep.scene_seed),
        "difficulty": ep.difficulty,
        "dt": float(ep.dt),
        "steps": int(ep.n_steps),
        "bev_size": int(ep.bev.shape[1]),
    }
    lines = [_dumps(header)]
    for t in range(ep.n_steps + 1):
        has_action = t < ep.n_steps
        lines.append(
            _dumps(
                {
                    "kind": "frame",
                    "t": t,
                    "pose": [float(p) for p in ep.poses[t]],
                    "v": float(ep.speeds[t]),
                    "command": int(ep.commands[t]),
                    "d_ctr": float(ep.d_ctr[t]),
                    "d_clr": float(ep.d_clr[t]),
                    "rewards": {
                        "r_ctr": float(ep.reward_components[t, 0]),
                        "r_clr": float(ep.reward_components[t, 1]),
                        "r_comf": float(ep.reward_components[t, 2]),
                        "total": float(ep.rewards[t]),
                    },
                    "ka_exec": [float(x) for x in ep.ka_exec[t]] if has_action else None,
                    "ka_expert": [float(x) for x in ep.ka_expert[t]] if has_action else None,
                    "token_exec": int(ep.token_exec[t]) if has_action else None,
                    "token_expert": int(ep.token_expert[t]) if has_action else None,
                    "bev": rle_encode(ep.bev[t]),
                }
            )
        )
    return lines


def write_episode(ep: Episode, path: str) -> str:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(episode_lines(ep)) + "\n")
    except OSError as e:
        raise DatasetIOError(f"cannot write episode: {e}", path) from e
    return path


def read_episode(path: str) -> Episode:
    try:
        with open(path, "r", encoding="utf-8") as f:
            records = [json.loads(line) for line in f if line.strip()]
    except OSError as e:
        raise DatasetIOError(f"cannot read episode: {e}", path) from e
    except json.JSONDecodeError as e:
        raise DatasetIOError(f"malformed episode line: {e}", path) from e
    if not records or records[0].get("kind") != "scene":
        raise ValidationError(f"{path}: missing scene header")
    header, frames = records[0], records[1:]
    T = int(header["steps"])
    if len(frames) != T + 1:
        raise ValidationError(f"{path}: header announces {T + 1} frames, found {len(frames)}")
    size = int(header["bev_size"])
    acted = frames[:T]
    return Episode(
        scene_seed=int(header["scene_seed"]),
        difficulty=header["difficulty"],
        dt=float(header["dt"]),
        poses=np.array([f["pose"] for f in frames], dtype=np.float64),
        speeds=np.array([f["v"] for f in frames], dtype=np.float64),
        commands=np.array([f["command"] for f in frames], dtype=np.int64),
        ka_exec=np.array([f["ka_exec"] for f in acted], dtype=np.float64).reshape(T, 2),
        ka_expert=np.array([f["ka_expert"] for f in acted], dtype=np.float64).reshape(T, 2),
        token_exec=np.array([f["token_exec"] for f in acted], dtype=np.int64),
        token_expert=np.array([f["token_expert"] for f in acted], dtype=np.int64),
        d_ctr=np.array([f["d_ctr"] for f in frames], dtype=np.float64),
        d_clr=np.array([f["d_clr"] for f in frames], dtype=np.float64),
        reward_components=np.array(
            [[f["rewards"]["r_ctr"], f["rewards"]["r_clr"], f["rewards"]["r_comf"]] for f in frames], dtype=np.float64
        ),
        rewards=np.array([f["rewards"]["total"] for f in frames], dtype=np.float64),
        bev=np.stack([rle_decode(f["bev"], (size, size)) for f in frames]),
    )


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------


def episode_plan(config: SimConfig, seeds: Sequence[int]) -> List[Dict]:
    """Seed, difficulty and split of every episode; the trailing fraction is held out."""
    n = len(seeds)
    n_heldout = int(round(n * config.heldout_fraction))
    return [
        {
            "path": f"{EPISODE_DIR}/ep_{i:05d}.jsonl",
            "scene_seed": int(seed),
            "difficulty": config.difficulties[i % len(config.difficulties)],
            "split": "heldout" if i >= n - n_heldout else "train",
        }
        for i, seed in enumerate(seeds)
    ]


def _build_one(entry: Dict, out_dir: str, config: SimConfig, bev: BevConfig, weights: RewardWeights) -> str:
    ep = simulate_episode(entry["scene_seed"], entry["difficulty"], config, bev, weights)
    return write_episode(ep, os.path.join(out_dir, entry["path"]))


def generate_dataset(
    out_dir: str,
    seeds: Sequence[int],
    config: SimConfig = SimConfig(),
    bev: BevConfig = BevConfig(),
    weights: RewardWeights = RewardWeights(),
    config_hash: str = "",
    root_seed: Optional[int] = None,
    jobs: int = 1,
    show_progress: bool = False,
) -> str:
    """Simulate one episode per seed and write the manifest; returns its path."""
    plan = episode_plan(config, seeds)
    work = partial(_build_one, out_dir=out_dir, config=config, bev=bev, weights=weights)
    if jobs > 1 and plan:
        process_map(work, plan, max_workers=jobs, chunksize=1, disable=not show_progress)
    else:
        for entry in tqdm(plan, desc="episodes", disable=not show_progress):
            work(entry)
    manifest = {
        "format": FORMAT_TAG,
        "n_episodes": len(plan),
        "episodes": plan,
        "sim": config.model_dump(),
        "bev": bev.model_dump(),
    }
    path = write_json(os.path.join(out_dir, MANIFEST_NAME), manifest, config_hash, root_seed)
    logger.info("wrote %d episodes to %s", len(plan), out_dir)
    return path


@dataclass
class Dataset:
    root: str
    manifest: Dict
    episodes: List[Episode]

    def split(self, name: str) -> List[Episode]:
        return [ep for ep, entry in zip(self.episodes, self.manifest["episodes"]) if entry["split"] == name]


def load_dataset(root: str, expected_hash: Optional[str] = None) -> Dataset:
    manifest = read_json(os.path.join(root, MANIFEST_NAME))
    if manifest.get("format") != FORMAT_TAG:
        raise ValidationError(f"{root}: unsupported dataset format {manifest.get('format')!r}")
    if expected_hash is not None and manifest.get("config_hash") != expected_hash:
        raise ValidationError(
            f"{root}: dataset was built with config {manifest.get('config_hash')}, current config is {expected_hash}"
        )
    episodes = [read_episode(os.path.join(root, entry["path"])) for entry in manifest["episodes"]]
    return Dataset(root, manifest, episodes)


def tokenize_episode(ep: Episode, codebook: Optional[Codebook], bev_tokens_per_frame: int) -> EpisodeTokens:
    """Local token indices of the T acted frames; rewards are per frame."""
    T = ep.n_steps
    if bev_tokens_per_frame and codebook is not None:
        bev = np.stack([encode(BevGrid(ep.bev[t]), codebook).reshape(-1)[:bev_tokens_per_frame] for t in range(T)])
    else:
        bev = np.zeros((T, 0), dtype=np.int64)
    return EpisodeTokens(
        commands=ep.commands[:T].copy(),
        bev=bev.astype(np.int64),
        traj_exec=ep.token_exec.copy(),
        traj_expert=ep.token_expert.copy(),
        rewards=ep.rewards[:T].astype(np.float32),
    )
