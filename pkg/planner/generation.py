"""
Token-level generation: per future frame, M BEV tokens then one trajectory
token, each sampled inside its modality's vocabulary range.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch
import torch.nn.functional as F

from errors import SequenceError, UsageError
from traj_tokens.vocab import Modality

from .model import PlannerTransformer
from .sequence import legal_mask, validate_layout

GENERATION_MODES = ("greedy", "sample")


@dataclass
class GeneratedFrame:
    bev: np.ndarray
    traj: int


@dataclass
class Generation:
    frames: List[GeneratedFrame] = field(default_factory=list)

    @property
    def traj_tokens(self) -> List[int]:
        return [f.traj for f in self.frames]


def _pick(logits: torch.Tensor, mask: torch.Tensor, mode: str, temperature: float, generator) -> int:
    logits = logits.masked_fill(~mask, float("-inf"))
    if mode == "greedy":
        return int(torch.argmax(logits))
    probs = F.softmax(logits / temperature, dim=-1)
    return int(torch.multinomial(probs, 1, generator=generator))


def _trim(window: List[int], frame_len: int, history: int) -> List[int]:
    """Keep the command token and the last `history` complete frames plus any partial frame."""
    body = window[1:]
    complete = len(body) // frame_len
    partial = len(body) - complete * frame_len
    keep = min(complete, history) * frame_len + partial
    return [window[0]] + (body[len(body) - keep :] if keep else [])


@torch.no_grad()
def generate(
    model: PlannerTransformer,
    context,
    horizon: int,
    mode: str = "greedy",
    temperature: float = 1.0,
    seed: Optional[int] = None,
) -> Generation:
    """
    Decode `horizon` future frames after a context of complete frames.

    The window slides so it never holds more than the command plus H
    complete frames and the frame being decoded.
    """
    if mode not in GENERATION_MODES:
        raise UsageError(f"unknown generation mode '{mode}', expected one of {GENERATION_MODES}")
    if mode == "sample" and temperature <= 0:
        raise UsageError("sampling temperature must be positive")
    config = model.config
    M, H = config.bev_tokens_per_frame, config.history
    ids = [int(t) for t in np.asarray(getattr(context, "ids", context)).reshape(-1)]
    if len(ids) > config.seq_len:
        raise SequenceError(f"context of {len(ids)} tokens exceeds the model's {config.seq_len}")
    if len(ids) == 0 or (len(ids) - 1) % (M + 1):
        raise SequenceError("context must be a command token followed by complete frames")
    validate_layout(ids, config.vocab, M)

    layout = config.vocab
    bev_mask, traj_mask = legal_mask(layout, Modality.BEV), legal_mask(layout, Modality.TRAJ)
    bev_off, traj_off = layout.offset(Modality.BEV), layout.offset(Modality.TRAJ)
    generator = torch.Generator().manual_seed(int(seed)) if seed is not None else None

    was_training = model.training
    model.eval()
    out = Generation()
    window = _trim(ids, M + 1, H)
    for _ in range(max(0, horizon)):
        bev = []
        for _ in range(M):
            logits = model(torch.as_tensor([window], dtype=torch.long))[0, -1]
            token = _pick(logits, bev_mask, mode, temperature, generator)
            bev.append(token - bev_off)
            window.append(token)
        logits = model(torch.as_tensor([window], dtype=torch.long))[0, -1]
        token = _pick(logits, traj_mask, mode, temperature, generator)
        window.append(token)
        out.frames.append(GeneratedFrame(np.asarray(bev, dtype=np.int64), token - traj_off))
        window = _trim(window, M + 1, H)
    model.train(was_training)
    return out


@torch.no_grad()
def next_traj_token(model: PlannerTransformer, prefix, mode: str = "greedy", temperature: float = 1.0,
                    generator: Optional[torch.Generator] = None) -> int:
    """Trajectory token for a prefix ending with the current frame's BEV tokens."""
    ids = torch.as_tensor([list(np.asarray(prefix).reshape(-1))], dtype=torch.long)
    was_training = model.training
    model.eval()
    logits = model(ids)[0, -1]
    model.train(was_training)
    token = _pick(logits, legal_mask(model.config.vocab, Modality.TRAJ), mode, temperature, generator)
    return token - model.config.vocab.offset(Modality.TRAJ)
