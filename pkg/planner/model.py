"""
Decoder-only transformer with sparse mixture-of-experts feed-forward blocks.

Embeddings are token + learned absolute position + modality type
(command / BEV / trajectory). The output head scores the full unified
vocabulary.
"""

import logging
import math
from typing import Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from errors import SequenceError

from .config import ModelConfig
from .sequence import position_modality

logger = logging.getLogger(__name__)


class ExpertMLP(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc_in = nn.Linear(d_model, d_ff)
        self.fc_out = nn.Linear(d_ff, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc_out(F.gelu(self.fc_in(x)))


class MoEFeedForward(nn.Module):
    """
    Softmax router over experts, top-k selection, renormalized gate weights.

    Ties in router probability go to the lowest expert index.
    """

    def __init__(self, d_model: int, d_ff: int, n_experts: int, top_k: int):
        super().__init__()
        if not 1 <= top_k <= n_experts:
            raise ValueError(f"top_k must lie in [1, {n_experts}], got {top_k}")
        self.n_experts = n_experts
        self.top_k = top_k
        self.router = nn.Linear(d_model, n_experts, bias=False)
        self.experts = nn.ModuleList([ExpertMLP(d_model, d_ff) for _ in range(n_experts)])
        self.last_expert_hist: Optional[torch.Tensor] = None

    def route(self, x_flat: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        router_probs = F.softmax(self.router(x_flat), dim=-1)
        order = torch.argsort(router_probs, dim=-1, descending=True, stable=True)
        top_k_indices = order[:, : self.top_k]
        top_k_values = torch.gather(router_probs, 1, top_k_indices)
        top_k_probs = top_k_values / top_k_values.sum(dim=-1, keepdim=True)
        return router_probs, top_k_indices, top_k_probs

    def aux_loss(self, router_probs: torch.Tensor, selected: torch.Tensor) -> torch.Tensor:
        expert_mask = F.one_hot(selected, num_classes=self.n_experts).to(router_probs.dtype)
        f_i = expert_mask.mean(dim=(0, 1))
        P_i = router_probs.mean(dim=0)
        return self.n_experts * torch.sum(f_i * P_i)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        shape = x.shape
        x_flat = x.reshape(-1, shape[-1])
        router_probs, top_k_indices, top_k_probs = self.route(x_flat)
        with torch.no_grad():
            self.last_expert_hist = torch.bincount(top_k_indices.reshape(-1), minlength=self.n_experts)
        out = torch.zeros_like(x_flat)
        for i, expert in enumerate(self.experts):
            rows, slots = torch.where(top_k_indices == i)
            if rows.numel() > 0:
                weight = top_k_probs[rows, slots].unsqueeze(-1)
                out = out.index_add(0, rows, weight * expert(x_flat[rows]))
        return out.reshape(shape), self.aux_loss(router_probs, top_k_indices)

    def dense_forward(self, x: torch.Tensor) -> torch.Tensor:
        """Every expert weighted by the full softmax gate (reference for top_k = n_experts)."""
        probs = F.softmax(self.router(x), dim=-1)
        outputs = torch.stack([expert(x) for expert in self.experts], dim=-1)
        return (outputs * probs.unsqueeze(-2)).sum(dim=-1)


class DenseFeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.mlp = ExpertMLP(d_model, d_ff)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.mlp(x), x.new_zeros(())

    def dense_forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp(x)


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, max_len: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)
        mask = torch.tril(torch.ones(max_len, max_len, dtype=torch.bool))
        self.register_buffer("causal_mask", mask, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        B, T, D = x.shape
        q, k, v = self.qkv(x).split(D, dim=-1)
        q = q.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~self.causal_mask[:T, :T], float("-inf"))
        att = F.softmax(scores, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(B, T, D)
        return self.proj(y)


class PlannerBlock(nn.Module):
    def __init__(self, config: ModelConfig, index: int):
        super().__init__()
        d = config.d_model
        self.ln_attn = nn.LayerNorm(d)
        self.attn = CausalSelfAttention(d, config.n_heads, config.seq_len)
        self.ln_ffn = nn.LayerNorm(d)
        if config.layer_uses_moe(index):
            self.ffn = MoEFeedForward(d, config.ff_dim, config.n_experts, config.top_k)
        else:
            self.ffn = DenseFeedForward(d, config.ff_dim)

    def forward(self, x: torch.Tensor, dense: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
        x = x + self.attn(self.ln_attn(x))
        h = self.ln_ffn(x)
        if dense:
            return x + self.ffn.dense_forward(h), x.new_zeros(())
        ffn_out, aux = self.ffn(h)
        return x + ffn_out, aux


class PlannerTransformer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.token_emb = nn.Embedding(config.vocab_size, d)
        self.pos_emb = nn.Embedding(config.seq_len, d)
        self.type_emb = nn.Embedding(3, d)
        self.blocks = nn.ModuleList([PlannerBlock(config, i) for i in range(config.n_layers)])
        self.ln_f = nn.LayerNorm(d)
        self.head = nn.Linear(d, config.vocab_size)
        modality = torch.as_tensor(position_modality(config.seq_len, config.bev_tokens_per_frame))
        self.register_buffer("modality_tags", modality, persistent=False)
        self.last_aux_loss: torch.Tensor = torch.zeros(())

    def _check(self, ids: torch.Tensor) -> None:
        if ids.dim() != 2:
            raise SequenceError(f"token ids must be (batch, length), got shape {tuple(ids.shape)}")
        T = ids.shape[1]
        if T == 0 or T > self.config.seq_len:
            raise SequenceError(f"sequence length {T} outside [1, {self.config.seq_len}]")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise SequenceError(f"token ids must lie in [0, {self.config.vocab_size})")

    def embed(self, ids: torch.Tensor) -> torch.Tensor:
        T = ids.shape[1]
        positions = torch.arange(T, device=ids.device)
        return self.token_emb(ids) + self.pos_emb(positions) + self.type_emb(self.modality_tags[:T])

    def hidden_states(self, ids: torch.Tensor, dense: bool = False) -> torch.Tensor:
        self._check(ids)
        x = self.embed(ids)
        aux = x.new_zeros(())
        for block in self.blocks:
            x, block_aux = block(x, dense=dense)
            aux = aux + block_aux
        self.last_aux_loss = aux
        return self.ln_f(x)

    def forward(self, ids: torch.Tensor, return_hidden: bool = False):
        """(B, T) global ids -> (B, T, V_all) next-token logits."""
        hidden = self.hidden_states(ids)
        logits = self.head(hidden)
        if return_hidden:
            return logits, hidden
        return logits

    def dense_forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.head(self.hidden_states(ids, dense=True))


def init_model(config: ModelConfig, seed: Optional[int] = None) -> PlannerTransformer:
    """Build a model whose initial parameters depend only on (config, seed)."""
    seed = config.seed if seed is None else seed
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = PlannerTransformer(config)
    logger.info("planner initialized: %d parameters (seed %d)", count_parameters(model), seed)
    return model


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def expected_parameter_count(config: ModelConfig) -> int:
    d, f, V, T, E = config.d_model, config.ff_dim, config.vocab_size, config.seq_len, config.n_experts
    mlp = d * f + f + f * d + d
    total = V * d + T * d + 3 * d
    for i in range(config.n_layers):
        total += 2 * d + (3 * d * d + 3 * d) + (d * d + d) + 2 * d
        total += (d * E + E * mlp) if config.layer_uses_moe(i) else mlp
    total += 2 * d + d * V + V
    return total


def moe_ffn(layer: MoEFeedForward, h: torch.Tensor) -> torch.Tensor:
    out, _ = layer(h)
    return out
