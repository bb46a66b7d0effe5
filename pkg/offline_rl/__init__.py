"""
Offline RL stage: geometry rewards, twin critics and SAC-BC.

Usage:
    from offline_rl import SacBcConfig, build_critic, rl_windows, SacBcTrainer

    critic = build_critic(model.config.d_model, n_traj_tokens)
    trainer = SacBcTrainer(model, critic, SacBcConfig())
    trainer.fit(rl_windows(episode_tokens, model.config, n_step=3))
"""

from .bandit import EnumerableBandit, train_bandit
from .critics import TwinCritic, build_critic
from .rewards import (
    RewardComponents,
    RewardWeights,
    frame_components,
    reward_centerline,
    reward_clearance,
    reward_comfort,
    reward_total,
)
from .sacbc import (
    RlRecord,
    SacBcConfig,
    SacBcTrainer,
    actor_loss,
    bc_loss,
    concat_rl_windows,
    critic_loss,
    make_rl_batch,
    rl_windows,
    sac_target,
    sacbc_step,
    write_rl_log,
)

__all__ = [
    "EnumerableBandit",
    "RewardComponents",
    "RewardWeights",
    "RlRecord",
    "SacBcConfig",
    "SacBcTrainer",
    "TwinCritic",
    "actor_loss",
    "bc_loss",
    "build_critic",
    "concat_rl_windows",
    "critic_loss",
    "frame_components",
    "make_rl_batch",
    "reward_centerline",
    "reward_clearance",
    "reward_comfort",
    "reward_total",
    "rl_windows",
    "sac_target",
    "sacbc_step",
    "train_bandit",
    "write_rl_log",
]
