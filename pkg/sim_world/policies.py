"""
Driving policies evaluated in closed loop.

A policy sees an Observation each step and returns a DrivingAction: either
a trajectory token (decoded by the runner through the token scheme) or a
continuous curvature/acceleration pair.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch

from bev_quantizer import BevGrid, Codebook, encode
from kinematics import KaPoint, poses_to_ka
from planner.generation import generate, next_traj_token
from planner.model import PlannerTransformer
from posttune import LaneLikelihoodMap, SmootherWeights, posttune_pipeline
from traj_tokens.fixed_bin import FixedBinKaScheme, to_local_frame
from traj_tokens.vocab import Modality

from .expert import ACCEL_LIMIT, expert_policy
from .scene import Scene

logger = logging.getLogger(__name__)

REFERENCE_BEHIND = 20.0
REFERENCE_AHEAD = 80.0
DEFAULT_PLAN_STEPS = 8


@dataclass
class Observation:
    scene: Scene
    pose: np.ndarray
    v: float
    time: float
    command: int
    bev: Optional[BevGrid] = None


@dataclass(frozen=True)
class DrivingAction:
    token: Optional[int] = None
    ka: Optional[KaPoint] = None


class DrivingPolicy(ABC):
    name = "policy"
    needs_bev = False

    def reset(self, scene: Scene) -> None:
        """Called once before each rollout."""

    @abstractmethod
    def act(self, obs: Observation) -> DrivingAction:
        ...


class ExpertPolicy(DrivingPolicy):
    name = "expert"

    def __init__(self, scheme: FixedBinKaScheme):
        self.scheme = scheme

    def act(self, obs: Observation) -> DrivingAction:
        expert = expert_policy(obs.scene, obs.pose, obs.v, obs.time)
        tokens, _ = self.scheme.encode_ka([[expert.action.kappa, expert.action.a]])
        return DrivingAction(token=int(tokens[0]))


class StopPolicy(DrivingPolicy):
    """Brakes as hard as the grid allows from the first step."""

    name = "stop"

    def __init__(self, scheme: FixedBinKaScheme):
        tokens, _ = scheme.encode_ka([[0.0, -ACCEL_LIMIT]])
        self.token = int(tokens[0])

    def act(self, obs: Observation) -> DrivingAction:
        return DrivingAction(token=self.token)


class RandomPolicy(DrivingPolicy):
    name = "random"

    def __init__(self, n_tokens: int, seed: int = 0):
        self.n_tokens = n_tokens
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, scene: Scene) -> None:
        self.rng = np.random.default_rng([self.seed, scene.seed])

    def act(self, obs: Observation) -> DrivingAction:
        return DrivingAction(token=int(self.rng.integers(self.n_tokens)))


class ReplayPolicy(DrivingPolicy):
    """Emits a fixed token list, then repeats its last token."""

    name = "replay"

    def __init__(self, tokens):
        self.tokens = [int(t) for t in tokens]
        self.step = 0

    def reset(self, scene: Scene) -> None:
        self.step = 0

    def act(self, obs: Observation) -> DrivingAction:
        token = self.tokens[min(self.step, len(self.tokens) - 1)]
        self.step += 1
        return DrivingAction(token=token)


class PlannerPolicy(DrivingPolicy):
    """Next trajectory token from the autoregressive planner."""

    name = "planner"
    needs_bev = True

    def __init__(self, model: PlannerTransformer, codebook: Optional[Codebook], mode: str = "greedy",
                 temperature: float = 1.0, seed: int = 0):
        self.model = model
        self.codebook = codebook
        self.mode = mode
        self.temperature = temperature
        self.seed = seed
        self.frames: List[Tuple[np.ndarray, int]] = []
        self.generator = torch.Generator().manual_seed(seed)

    def reset(self, scene: Scene) -> None:
        self.frames = []
        self.generator = torch.Generator().manual_seed(int(np.random.SeedSequence([self.seed, scene.seed]).generate_state(1)[0]))

    def bev_tokens(self, bev: Optional[BevGrid]) -> np.ndarray:
        M = self.model.config.bev_tokens_per_frame
        if M == 0:
            return np.zeros(0, dtype=np.int64)
        return encode(bev, self.codebook).reshape(-1)[:M].astype(np.int64)

    def prefix(self, command: int, bev: np.ndarray) -> List[int]:
        """[C, last H complete frames, current BEV] as global ids."""
        layout = self.model.config.vocab
        bev_off, traj_off = layout.offset(Modality.BEV), layout.offset(Modality.TRAJ)
        ids = [layout.offset(Modality.COMMAND) + int(command)]
        history = self.frames[-self.model.config.history :] if self.model.config.history else []
        for frame_bev, traj in history:
            ids.extend(int(b) + bev_off for b in frame_bev)
            ids.append(int(traj) + traj_off)
        ids.extend(int(b) + bev_off for b in bev)
        return ids

    def act(self, obs: Observation) -> DrivingAction:
        bev = self.bev_tokens(obs.bev)
        token = next_traj_token(self.model, self.prefix(obs.command, bev), self.mode, self.temperature, self.generator)
        self.frames.append((bev, token))
        return DrivingAction(token=int(token))

    def plan(self, obs: Observation, steps: int) -> List[int]:
        """Greedy token plan of `steps` frames starting at the current frame."""
        bev = self.bev_tokens(obs.bev)
        prefix = self.prefix(obs.command, bev)
        first = next_traj_token(self.model, prefix, self.mode, self.temperature, self.generator)
        self.frames.append((bev, first))
        if steps <= 1:
            return [first]
        context = prefix + [first + self.model.config.vocab.offset(Modality.TRAJ)]
        rest = generate(self.model, context, steps - 1, self.mode, self.temperature,
                        seed=int(torch.randint(0, 2**31 - 1, (1,), generator=self.generator)))
        return [first] + rest.traj_tokens


def local_reference(scene: Scene, pose) -> np.ndarray:
    """Centerline near the ego, expressed in the ego frame."""
    s, _ = scene.centerline.project([np.asarray(pose)[:2]])
    arc = scene.centerline.arc
    keep = (arc >= s[0] - REFERENCE_BEHIND) & (arc <= s[0] + REFERENCE_AHEAD)
    pts = scene.centerline.points[keep]
    poses = np.column_stack([pts, np.zeros(len(pts))])
    return to_local_frame(np.asarray(pose, dtype=np.float64), poses)[:, :2]


def first_step_action(local_plan: np.ndarray, v: float, dt: float) -> KaPoint:
    """(kappa, a) taking the ego from the origin toward the first two planned waypoints."""
    poses = np.vstack([[0.0, 0.0, 0.0], local_plan[:2]])
    kappa = float(poses_to_ka(poses, dt)[0, 0])
    v_next = float(np.hypot(*(local_plan[1, :2] - local_plan[0, :2]))) / dt
    return KaPoint(kappa, (v_next - v) / dt)


class PosttunedPlannerPolicy(PlannerPolicy):
    """Plans several frames ahead, refines the plan and executes its first step continuously."""

    name = "planner+posttune"

    def __init__(self, model: PlannerTransformer, codebook: Optional[Codebook], scheme: FixedBinKaScheme,
                 weights: SmootherWeights = SmootherWeights(), plan_steps: int = DEFAULT_PLAN_STEPS, **kwargs):
        super().__init__(model, codebook, **kwargs)
        self.scheme = scheme
        self.weights = weights
        self.plan_steps = max(3, plan_steps)

    def act(self, obs: Observation) -> DrivingAction:
        tokens = self.plan(obs, self.plan_steps)
        plan = self.scheme.detokenize(np.asarray(tokens), np.asarray(obs.pose, dtype=np.float64), obs.v)
        local = to_local_frame(np.asarray(obs.pose, dtype=np.float64), plan)[1:]
        lane_map = LaneLikelihoodMap.from_bev_raster(obs.bev.cells, obs.bev.resolution)
        refined = posttune_pipeline(local, lane_map, local_reference(obs.scene, obs.pose), self.weights, initial_yaw=0.0)
        ka = first_step_action(refined.poses, obs.v, self.scheme.dt)
        clamped = self.scheme.clamp_ka([[ka.kappa, ka.a]])[0]
        return DrivingAction(ka=KaPoint(float(clamped[0]), float(clamped[1])))
