"""
Twin Q heads with Polyak-averaged targets.

Each head maps a context embedding to one value per trajectory token.
"""

import copy
from typing import List

import torch
import torch.nn as nn


class QHead(nn.Module):
    def __init__(self, in_dim: int, n_actions: int, hidden: int = 128):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Linear(hidden, n_actions))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


class TwinCritic(nn.Module):
    def __init__(self, in_dim: int, n_actions: int, hidden: int = 128):
        super().__init__()
        self.q = nn.ModuleList([QHead(in_dim, n_actions, hidden) for _ in range(2)])
        self.target = copy.deepcopy(self.q)
        for p in self.target.parameters():
            p.requires_grad_(False)

    def trainable_parameters(self) -> List[nn.Parameter]:
        return list(self.q.parameters())

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        """(..., in_dim) -> (2, ..., n_actions)."""
        return torch.stack([head(h) for head in self.q])

    @torch.no_grad()
    def target_values(self, h: torch.Tensor) -> torch.Tensor:
        return torch.stack([head(h) for head in self.target])

    @torch.no_grad()
    def polyak_update(self, tau: float) -> None:
        """target <- (1 - tau) * target + tau * online."""
        for t, p in zip(self.target.parameters(), self.q.parameters()):
            t.copy_((1.0 - tau) * t + tau * p)

    @torch.no_grad()
    def target_drift(self) -> float:
        """L2 distance between online and target parameters."""
        sq = sum(float(((t - p) ** 2).sum()) for t, p in zip(self.target.parameters(), self.q.parameters()))
        return sq**0.5


def build_critic(in_dim: int, n_actions: int, hidden: int = 128, seed: int = 0) -> TwinCritic:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return TwinCritic(in_dim, n_actions, hidden)
