"""
Offline SAC-BC over the discrete trajectory-token action set.

Critic: clipped double-Q regression onto the soft target plus a CQL
logsumexp penalty. Actor: exact expectation of alpha * log pi - min Q.
BC: negative log-likelihood of the expert token weighted by a clipped
exponential advantage. Expectations over actions are exact sums.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from tqdm import tqdm

from errors import InternalError, SizeError, TrainingError
from planner.config import ModelConfig
from planner.model import PlannerTransformer
from planner.sequence import EpisodeTokens, episode_windows, traj_positions, window_starts
from planner.training import head_losses, target_modality
from reports import write_csv
from traj_tokens.vocab import Modality

from .critics import TwinCritic

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-6
RL_LOG_COLUMNS = ["step", "l_critic", "l_actor", "l_bc", "mean_reward", "mean_adv", "mean_w", "target_drift"]


class SacBcConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gamma: float = Field(0.95, gt=0.0, lt=1.0)
    alpha: float = Field(0.05, ge=0.0)
    alpha_cql: float = Field(0.5, ge=0.0)
    lambda_critic: float = Field(1.0, ge=0.0)
    lambda_actor: float = Field(1.0, ge=0.0)
    lambda_bc: float = Field(1.0, ge=0.0)
    lambda_awac: float = Field(1.0, gt=0.0)
    awac_clip: float = Field(20.0, gt=0.0)
    tau: float = Field(0.01, gt=0.0, le=1.0)
    lambda_bev: float = Field(0.1, ge=0.0)
    lr: float = Field(1e-4, gt=0.0)
    critic_lr: float = Field(3e-4, gt=0.0)
    weight_decay: float = Field(1e-4, ge=0.0)
    grad_clip: float = Field(1.0, ge=0.0)
    critic_hidden: int = Field(128, ge=1)
    batch_size: int = Field(16, ge=1)
    epochs: int = Field(4, ge=0)
    td_horizon: int = Field(1, ge=1, le=1)


@dataclass
class RlRecord:
    step: int
    l_critic: float
    l_actor: float
    l_bc: float
    mean_reward: float
    mean_adv: float
    mean_w: float
    target_drift: float


def min_q(q: torch.Tensor) -> torch.Tensor:
    """(2, ..., K) -> (..., K) elementwise minimum over the twin heads."""
    return torch.min(q[0], q[1])


def sac_target(
    r: torch.Tensor,
    next_probs: torch.Tensor,
    target_q_next: torch.Tensor,
    gamma: float,
    alpha: float,
    done: torch.Tensor,
) -> torch.Tensor:
    """
    y = r + gamma (1 - done) sum_a pi(a|ctx') [min_i Qbar_i(ctx', a) - alpha ln pi(a|ctx')].
    """
    with torch.no_grad():
        next_probs = next_probs.to(torch.float64)
        total = next_probs.sum(dim=-1)
        if torch.any((total - 1.0).abs() > NORMALIZATION_TOL):
            raise InternalError(f"policy is not normalized: max |sum pi - 1| = {float((total - 1).abs().max()):.3e}")
        q = min_q(target_q_next.to(torch.float64))
        soft_value = (next_probs * q).sum(dim=-1) - alpha * torch.special.xlogy(next_probs, next_probs).sum(dim=-1)
        y = r.to(torch.float64) + gamma * (1.0 - done.to(torch.float64)) * soft_value
    return y.to(r.dtype if r.is_floating_point() else torch.float32)


def cql_penalty(q: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
    """sum_i [logsumexp_a Q_i - Q_i(A)], batch mean."""
    taken = torch.gather(q, -1, actions.unsqueeze(0).expand(q.shape[0], *actions.shape).unsqueeze(-1)).squeeze(-1)
    return (torch.logsumexp(q, dim=-1) - taken).sum(dim=0).mean()


def critic_loss(q: torch.Tensor, actions: torch.Tensor, y: torch.Tensor, alpha_cql: float) -> torch.Tensor:
    """
    q: (2, N, K) online values, actions: (N,), y: (N,).
    1/2 sum_i (Q_i(A) - y)^2 + alpha_cql * CQL, averaged over the batch.
    """
    if actions.numel() == 0:
        raise SizeError("critic_loss needs a non-empty batch")
    taken = torch.gather(q, -1, actions.unsqueeze(0).expand(q.shape[0], *actions.shape).unsqueeze(-1)).squeeze(-1)
    td = 0.5 * ((taken - y.detach().unsqueeze(0)) ** 2).sum(dim=0).mean()
    return td + alpha_cql * cql_penalty(q, actions)


def actor_loss(policy_logits: torch.Tensor, q: torch.Tensor, alpha: float) -> torch.Tensor:
    """E[alpha sum_a pi ln pi - sum_a pi min_i Q_i]; Q is a constant here."""
    if policy_logits.numel() == 0:
        raise SizeError("actor_loss needs a non-empty batch")
    log_pi = F.log_softmax(policy_logits, dim=-1)
    pi = log_pi.exp()
    q_min = min_q(q.detach())
    return (alpha * (pi * log_pi).sum(dim=-1) - (pi * q_min).sum(dim=-1)).mean()


def bc_loss(
    policy_logits: torch.Tensor,
    q: torch.Tensor,
    expert_actions: torch.Tensor,
    lambda_awac: float,
    clip: float,
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Advantage-weighted NLL of the expert token. Returns (loss, Adv, w); the
    weights carry no gradient.
    """
    log_pi = F.log_softmax(policy_logits, dim=-1)
    with torch.no_grad():
        q_min = min_q(q.detach())
        q_expert = torch.gather(q_min, -1, expert_actions.unsqueeze(-1)).squeeze(-1)
        adv = q_expert - (log_pi.exp() * q_min).sum(dim=-1)
        w = torch.clamp(torch.exp(adv / lambda_awac), max=clip)
    nll = -torch.gather(log_pi, -1, expert_actions.unsqueeze(-1)).squeeze(-1)
    return (w * nll).mean(), adv, w


def sacbc_objective(
    policy_logits: torch.Tensor,
    next_policy_logits: torch.Tensor,
    q: torch.Tensor,
    target_q_next: torch.Tensor,
    actions: torch.Tensor,
    expert_actions: torch.Tensor,
    rewards: torch.Tensor,
    done: torch.Tensor,
    config: SacBcConfig,
) -> Dict[str, torch.Tensor]:
    """All SAC-BC terms on flattened (N, K) transition tensors."""
    next_probs = F.softmax(next_policy_logits.detach().to(torch.float64), dim=-1)
    y = sac_target(rewards, next_probs, target_q_next, config.gamma, config.alpha, done)
    l_critic = critic_loss(q, actions, y, config.alpha_cql)
    l_actor = actor_loss(policy_logits, q, config.alpha)
    l_bc, adv, w = bc_loss(policy_logits, q, expert_actions, config.lambda_awac, config.awac_clip)
    return {"l_critic": l_critic, "l_actor": l_actor, "l_bc": l_bc, "adv": adv, "w": w, "y": y}


@dataclass
class RlBatch:
    inputs: torch.Tensor
    targets: torch.Tensor
    actions: torch.Tensor
    expert_actions: torch.Tensor
    rewards: torch.Tensor
    done: torch.Tensor
    frame_slots: torch.Tensor

    def __len__(self) -> int:
        return self.inputs.shape[0]


def rl_windows(tokens: EpisodeTokens, config: ModelConfig, n_step: int):
    """
    Transitions of every window: the last `n_step` frame pairs (j, j + 1)
    whose successor is inside the window. Reward is that of frame j + 1;
    done marks a successor on the episode's last tokenized frame.
    """
    if tokens.rewards is None:
        raise SizeError("episode tokens carry no rewards")
    H = config.history
    if H < 1:
        raise SizeError("RL windows need history >= 1 so a transition fits inside the window")
    W = H + 1
    n = max(1, min(n_step, H))
    starts = window_starts(tokens.n_frames, H)
    inputs, targets = episode_windows(tokens, config, starts)
    slots = np.arange(W - 1 - n, W - 1)
    actions, expert, rewards, done = [], [], [], []
    for t in starts:
        frames = t - H + slots
        actions.append(tokens.traj_exec[frames])
        expert.append(tokens.traj_expert[frames])
        rewards.append(tokens.rewards[frames + 1])
        done.append((frames + 1 == tokens.n_frames - 1).astype(np.float32))
    empty = np.zeros((0, n))
    return {
        "inputs": inputs,
        "targets": targets,
        "actions": np.stack(actions) if actions else empty.astype(np.int64),
        "expert": np.stack(expert) if expert else empty.astype(np.int64),
        "rewards": np.stack(rewards).astype(np.float32) if rewards else empty.astype(np.float32),
        "done": np.stack(done) if done else empty.astype(np.float32),
        "slots": slots,
    }


def concat_rl_windows(parts: Sequence[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Stack per-episode window dicts; all parts share one slot layout."""
    parts = [p for p in parts if len(p["inputs"])]
    if not parts:
        raise SizeError("no RL training windows")
    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0] if key != "slots"}
    merged["slots"] = parts[0]["slots"]
    return merged


def make_rl_batch(data: Dict[str, np.ndarray], idx: Optional[np.ndarray] = None) -> RlBatch:
    idx = np.arange(len(data["inputs"])) if idx is None else idx
    if len(idx) == 0:
        raise SizeError("RL batch must contain at least one window")
    return RlBatch(
        torch.as_tensor(data["inputs"][idx], dtype=torch.long),
        torch.as_tensor(data["targets"][idx], dtype=torch.long),
        torch.as_tensor(data["actions"][idx], dtype=torch.long),
        torch.as_tensor(data["expert"][idx], dtype=torch.long),
        torch.as_tensor(data["rewards"][idx], dtype=torch.float32),
        torch.as_tensor(data["done"][idx], dtype=torch.float32),
        torch.as_tensor(data["slots"], dtype=torch.long),
    )


def make_optimizers(model: PlannerTransformer, critic: TwinCritic, config: SacBcConfig):
    policy_opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    critic_opt = torch.optim.AdamW(critic.trainable_parameters(), lr=config.critic_lr, weight_decay=config.weight_decay)
    return policy_opt, critic_opt


def sacbc_step(
    model: PlannerTransformer,
    critic: TwinCritic,
    policy_opt: torch.optim.Optimizer,
    critic_opt: torch.optim.Optimizer,
    batch: RlBatch,
    config: SacBcConfig,
    step: int = 0,
) -> RlRecord:
    """
    One SAC-BC update: critic and policy step on
    lambda_critic L_critic + lambda_actor L_actor + lambda L_BC + lambda_bev L_bev,
    then a Polyak step of the target critics.
    """
    mcfg = model.config
    model.train()
    policy_opt.zero_grad(set_to_none=True)
    critic_opt.zero_grad(set_to_none=True)

    logits, hidden = model(batch.inputs, return_hidden=True)
    n_frames = mcfg.history + 1
    # position p predicts p + 1, so A_j is predicted from its trajectory slot minus one
    pred_pos = torch.as_tensor(traj_positions(n_frames, mcfg.bev_tokens_per_frame) - 1, dtype=torch.long)
    pos_t = pred_pos[batch.frame_slots]
    pos_next = pred_pos[batch.frame_slots + 1]
    lo, hi = mcfg.vocab.token_range(Modality.TRAJ)

    policy_t = logits[:, pos_t, lo:hi]
    policy_next = logits[:, pos_next, lo:hi]
    h_t = hidden[:, pos_t].detach()
    h_next = hidden[:, pos_next].detach()
    K = hi - lo

    q = critic(h_t).reshape(2, -1, K)
    target_q_next = critic.target_values(h_next).reshape(2, -1, K)
    terms = sacbc_objective(
        policy_t.reshape(-1, K),
        policy_next.reshape(-1, K),
        q,
        target_q_next,
        batch.actions.reshape(-1),
        batch.expert_actions.reshape(-1),
        batch.rewards.reshape(-1),
        batch.done.reshape(-1),
        config,
    )
    l_bev, _ = head_losses(logits, batch.targets, target_modality(model, batch.inputs.shape[1]))
    total = (
        config.lambda_critic * terms["l_critic"]
        + config.lambda_actor * terms["l_actor"]
        + config.lambda_bc * terms["l_bc"]
        + config.lambda_bev * l_bev
    )
    if not torch.isfinite(total):
        raise TrainingError(
            "non-finite SAC-BC loss",
            {k: terms[k].item() for k in ("l_critic", "l_actor", "l_bc")} | {"step": step},
        )
    total.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    torch.nn.utils.clip_grad_norm_(critic.trainable_parameters(), config.grad_clip)
    policy_opt.step()
    critic_opt.step()
    critic.polyak_update(config.tau)

    return RlRecord(
        step,
        terms["l_critic"].item(),
        terms["l_actor"].item(),
        terms["l_bc"].item(),
        batch.rewards.mean().item(),
        terms["adv"].mean().item(),
        terms["w"].mean().item(),
        critic.target_drift(),
    )


class SacBcTrainer:
    """Stage-II loop over shuffled RL windows."""

    def __init__(self, model, critic, config: SacBcConfig, seed: int = 0):
        self.model = model
        self.critic = critic
        self.config = config
        self.seed = seed
        self.policy_opt, self.critic_opt = make_optimizers(model, critic, config)
        self.step = 0
        self.history = []

    def fit(self, data: Dict[str, np.ndarray], epochs: Optional[int] = None, show_progress: bool = False):
        n = len(data["inputs"])
        if n == 0:
            raise SizeError("no RL training windows")
        epochs = self.config.epochs if epochs is None else epochs
        bs = self.config.batch_size
        for epoch in range(epochs):
            order = np.random.default_rng([self.seed, epoch]).permutation(n)
            for start in tqdm(range(0, n, bs), desc=f"sac-bc {epoch}", disable=not show_progress):
                batch = make_rl_batch(data, order[start : start + bs])
                record = sacbc_step(self.model, self.critic, self.policy_opt, self.critic_opt, batch, self.config, self.step)
                self.history.append(record)
                self.step += 1
            logger.info("sac-bc epoch %d: last l_critic %.4f l_bc %.4f", epoch, record.l_critic, record.l_bc)
        return self.history


def write_rl_log(records: Iterable[RlRecord], path: str, config_hash: str = "", seed: Optional[int] = None) -> str:
    return write_csv(path, RL_LOG_COLUMNS, (asdict(r) for r in records), config_hash, seed)
