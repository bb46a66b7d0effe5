"""
Enumerable contextual bandit for checking SAC-BC end to end.

States are one-hot contexts, the policy is a table of logits, logged
actions are uniform and every transition is terminal, so the critic
target is the reward itself and the optimal action is known exactly.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .critics import build_critic
from .sacbc import SacBcConfig, sacbc_objective

logger = logging.getLogger(__name__)

DEFAULT_STATES = 3
DEFAULT_ACTIONS = 4
DEFAULT_STEPS = 2000
DEFAULT_BATCH = 64
DEFAULT_LR = 1e-2

BANDIT_SACBC = SacBcConfig(alpha=0.05, alpha_cql=0.1, lambda_awac=1.0, tau=0.05, lr=DEFAULT_LR, critic_lr=DEFAULT_LR, weight_decay=0.0, critic_hidden=32)


@dataclass
class EnumerableBandit:
    rewards: np.ndarray  # (S, K)

    @classmethod
    def random(cls, seed: int = 0, n_states: int = DEFAULT_STATES, n_actions: int = DEFAULT_ACTIONS) -> "EnumerableBandit":
        """Each state gets a shuffled, evenly spaced reward ladder in [0, 1]."""
        rng = np.random.default_rng(seed)
        ladder = np.linspace(0.0, 1.0, n_actions)
        return cls(np.stack([rng.permutation(ladder) for _ in range(n_states)]))

    @property
    def n_states(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_actions(self) -> int:
        return self.rewards.shape[1]

    def optimal_actions(self) -> np.ndarray:
        return np.argmax(self.rewards, axis=1)

    def sample(self, rng: np.random.Generator, batch: int):
        states = rng.integers(0, self.n_states, size=batch)
        actions = rng.integers(0, self.n_actions, size=batch)
        return states, actions, self.rewards[states, actions]


@dataclass
class BanditResult:
    policy_logits: np.ndarray
    greedy: np.ndarray
    optimal: np.ndarray
    solved_at: Optional[int]

    @property
    def solved(self) -> bool:
        return bool(np.array_equal(self.greedy, self.optimal))


def train_bandit(
    bandit: EnumerableBandit,
    steps: int = DEFAULT_STEPS,
    seed: int = 0,
    config: SacBcConfig = BANDIT_SACBC,
    batch_size: int = DEFAULT_BATCH,
) -> BanditResult:
    """Run SAC-BC on logged uniform data; A_gt is the logged action."""
    S, K = bandit.n_states, bandit.n_actions
    rng = np.random.default_rng(seed)
    torch.manual_seed(seed)
    logits = torch.nn.Parameter(torch.zeros(S, K))
    critic = build_critic(S, K, hidden=config.critic_hidden, seed=seed)
    policy_opt = torch.optim.Adam([logits], lr=config.lr)
    critic_opt = torch.optim.Adam(critic.trainable_parameters(), lr=config.critic_lr)
    eye = torch.eye(S)
    optimal = bandit.optimal_actions()
    solved_at = None

    for step in range(steps):
        states, actions, rewards = bandit.sample(rng, batch_size)
        s = torch.as_tensor(states)
        a = torch.as_tensor(actions)
        ctx = eye[s]
        terms = sacbc_objective(
            logits[s],
            logits[s],
            critic(ctx),
            critic.target_values(ctx),
            a,
            a,
            torch.as_tensor(rewards, dtype=torch.float32),
            torch.ones(batch_size),
            config,
        )
        total = config.lambda_critic * terms["l_critic"] + config.lambda_actor * terms["l_actor"] + config.lambda_bc * terms["l_bc"]
        policy_opt.zero_grad(set_to_none=True)
        critic_opt.zero_grad(set_to_none=True)
        total.backward()
        policy_opt.step()
        critic_opt.step()
        critic.polyak_update(config.tau)

        greedy = logits.detach().argmax(dim=1).numpy()
        if np.array_equal(greedy, optimal):
            if solved_at is None:
                solved_at = step + 1
        else:
            solved_at = None

    greedy = logits.detach().argmax(dim=1).numpy()
    logger.info("bandit seed %d: greedy %s optimal %s", seed, greedy.tolist(), optimal.tolist())
    return BanditResult(logits.detach().numpy().copy(), greedy, optimal, solved_at)
