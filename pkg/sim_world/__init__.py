"""
Synthetic 2D driving world: scenes, expert demonstrations, BEV rasters,
closed-loop execution of token policies and PDMS-style scoring.

Usage:
    from sim_world import build_scene, ExpertPolicy, closed_loop_eval

    scenes = [build_scene(seed, "medium") for seed in range(10)]
    results, summary = closed_loop_eval(ExpertPolicy(scheme), scenes, scheme)
    print(summary["pdms_style"])
"""

from .dataset import (
    Dataset,
    Episode,
    SimConfig,
    frame_rewards,
    generate_dataset,
    load_dataset,
    read_episode,
    simulate_episode,
    tokenize_episode,
    write_episode,
)
from .evaluation import closed_loop_eval, expert_progress, open_loop_eval, rollout, run_episode
from .expert import ExpertAction, expert_policy
from .geometry import Box, Polyline
from .metrics import SCORE_LABEL, ClosedLoopResult, aggregate, pdms
from .policies import (
    DrivingAction,
    DrivingPolicy,
    ExpertPolicy,
    Observation,
    PlannerPolicy,
    PosttunedPlannerPolicy,
    RandomPolicy,
    ReplayPolicy,
    StopPolicy,
)
from .raster import distances, rasterize_bev, step
from .scene import DIFFICULTIES, Command, Scene, build_scene, route_command, spawn_clear

__all__ = [
    "Box",
    "ClosedLoopResult",
    "Command",
    "DIFFICULTIES",
    "Dataset",
    "DrivingAction",
    "DrivingPolicy",
    "Episode",
    "ExpertAction",
    "ExpertPolicy",
    "Observation",
    "PlannerPolicy",
    "Polyline",
    "PosttunedPlannerPolicy",
    "RandomPolicy",
    "ReplayPolicy",
    "SCORE_LABEL",
    "Scene",
    "SimConfig",
    "StopPolicy",
    "aggregate",
    "build_scene",
    "closed_loop_eval",
    "distances",
    "expert_policy",
    "expert_progress",
    "frame_rewards",
    "generate_dataset",
    "load_dataset",
    "open_loop_eval",
    "pdms",
    "rasterize_bev",
    "read_episode",
    "rollout",
    "route_command",
    "run_episode",
    "simulate_episode",
    "spawn_clear",
    "step",
    "tokenize_episode",
    "write_episode",
]
