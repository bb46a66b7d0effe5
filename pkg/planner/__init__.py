"""
Autoregressive planner: decoder-only MoE transformer over the unified
command / BEV / trajectory vocabulary.

Usage:
    from planner import ModelConfig, init_model, generate

    model = init_model(ModelConfig(), seed=0)
    frames = generate(model, context_ids, horizon=2)
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, build_config, required_seq_len, scheduled_sampling_p
from .generation import Generation, generate, next_traj_token
from .grad_check import grad_check
from .model import (
    MoEFeedForward,
    PlannerTransformer,
    count_parameters,
    expected_parameter_count,
    init_model,
    moe_ffn,
)
from .sequence import EpisodeTokens, SequenceBatch, TokenSequence, build_sequence, episode_windows, make_batch
from .training import LossRecord, Trainer, joint_loss, make_optimizer, train_step, write_training_log

__all__ = [
    "EpisodeTokens",
    "Generation",
    "LossRecord",
    "ModelConfig",
    "MoEFeedForward",
    "PlannerTransformer",
    "SequenceBatch",
    "TokenSequence",
    "TrainConfig",
    "Trainer",
    "build_config",
    "build_sequence",
    "count_parameters",
    "episode_windows",
    "expected_parameter_count",
    "generate",
    "grad_check",
    "init_model",
    "joint_loss",
    "load_checkpoint",
    "make_batch",
    "make_optimizer",
    "moe_ffn",
    "next_traj_token",
    "required_seq_len",
    "save_checkpoint",
    "scheduled_sampling_p",
    "train_step",
    "write_training_log",
]
