"""
Token sequence layout and batch assembly.

A window covers H + 1 frames:

    [C, V_{t-H,1..M}, A_{t-H}, ..., V_{t,1..M}, A_t]

Position p of the model predicts the token at p + 1, so the modality that
position p is scored against is the modality of position p + 1.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

from errors import SequenceError, SizeError
from traj_tokens.vocab import Modality, VocabLayout

from .config import ModelConfig


@dataclass
class TokenSequence:
    ids: np.ndarray
    modality: np.ndarray
    frame: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class EpisodeTokens:
    """Per-frame local token indices of one episode."""

    commands: np.ndarray
    bev: np.ndarray
    traj_exec: np.ndarray
    traj_expert: np.ndarray
    rewards: Optional[np.ndarray] = None

    @property
    def n_frames(self) -> int:
        return len(self.traj_exec)


@dataclass
class SequenceBatch:
    """
    inputs carry executed trajectory tokens, targets the expert ones; both
    are (B, T) global ids on the same layout.
    """

    inputs: torch.Tensor
    targets: torch.Tensor
    rewards: Optional[torch.Tensor] = None
    done: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return self.inputs.shape[0]


def layout_tags(n_frames: int, bev_tokens_per_frame: int):
    """Modality and frame index of every position for a command + n_frames layout."""
    M = bev_tokens_per_frame
    length = 1 + n_frames * (M + 1)
    modality = np.full(length, Modality.BEV, dtype=np.int64)
    frame = np.full(length, -1, dtype=np.int64)
    modality[0] = Modality.COMMAND
    for f in range(n_frames):
        start = 1 + f * (M + 1)
        frame[start : start + M + 1] = f
        modality[start + M] = Modality.TRAJ
    return modality, frame


def position_modality(length: int, bev_tokens_per_frame: int) -> np.ndarray:
    """Modality tags for the first `length` positions of the layout (partial frames allowed)."""
    n_frames = max(0, -(-(length - 1) // (bev_tokens_per_frame + 1)))
    modality, _ = layout_tags(n_frames, bev_tokens_per_frame)
    return modality[:length]


def traj_positions(n_frames: int, bev_tokens_per_frame: int) -> np.ndarray:
    """Positions holding the trajectory token of each frame."""
    return 1 + np.arange(n_frames) * (bev_tokens_per_frame + 1) + bev_tokens_per_frame


def build_sequence(layout: VocabLayout, command: int, bev_frames, traj_tokens) -> TokenSequence:
    """Interleave local indices into global ids: [C, V_1, A_1, ..., V_n, A_n]."""
    bev_frames = np.asarray(bev_frames, dtype=np.int64)
    traj_tokens = np.asarray(traj_tokens, dtype=np.int64).reshape(-1)
    n_frames = len(traj_tokens)
    if bev_frames.size == 0:
        bev_frames = bev_frames.reshape(n_frames, 0)
    if bev_frames.ndim != 2 or len(bev_frames) != n_frames:
        raise SequenceError(f"need one BEV row per trajectory token, got {bev_frames.shape} and {n_frames}")
    M = bev_frames.shape[1]
    if not 0 <= command < layout.n_command:
        raise SequenceError(f"command {command} outside [0, {layout.n_command})")
    if bev_frames.size and (bev_frames.min() < 0 or bev_frames.max() >= layout.n_bev):
        raise SequenceError(f"BEV tokens must lie in [0, {layout.n_bev})")
    if traj_tokens.size and (traj_tokens.min() < 0 or traj_tokens.max() >= layout.n_traj):
        raise SequenceError(f"trajectory tokens must lie in [0, {layout.n_traj})")

    modality, frame = layout_tags(n_frames, M)
    ids = np.empty(len(modality), dtype=np.int64)
    ids[0] = command
    bev_off, traj_off = layout.offset(Modality.BEV), layout.offset(Modality.TRAJ)
    for f in range(n_frames):
        start = 1 + f * (M + 1)
        ids[start : start + M] = bev_frames[f] + bev_off
        ids[start + M] = traj_tokens[f] + traj_off
    return TokenSequence(ids, modality, frame)


def validate_layout(ids, layout: VocabLayout, bev_tokens_per_frame: int) -> None:
    """Raise SequenceError unless every id lies in the range its position requires."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.shape[1] == 0:
        raise SequenceError("empty token sequence")
    modality = position_modality(ids.shape[1], bev_tokens_per_frame)
    for mod in Modality:
        lo, hi = layout.token_range(mod)
        cols = ids[:, modality == mod]
        if cols.size and (cols.min() < lo or cols.max() >= hi):
            raise SequenceError(f"{mod.name.lower()} position holds an id outside [{lo}, {hi})")


def legal_mask(layout: VocabLayout, modality: Modality) -> torch.Tensor:
    mask = torch.zeros(layout.total, dtype=torch.bool)
    lo, hi = layout.token_range(modality)
    mask[lo:hi] = True
    return mask


def window_starts(n_frames: int, history: int) -> List[int]:
    """Current-frame indices t for which frames t-H..t all exist."""
    return list(range(history, n_frames))


def episode_windows(tokens: EpisodeTokens, config: ModelConfig, starts: Optional[Sequence[int]] = None):
    """
    (inputs, targets) global-id arrays, one row per window ending at frame t.

    The command of a window is the command at its current frame.
    """
    H, M = config.history, config.bev_tokens_per_frame
    starts = window_starts(tokens.n_frames, H) if starts is None else list(starts)
    inputs, targets = [], []
    for t in starts:
        frames = slice(t - H, t + 1)
        bev = tokens.bev[frames][:, :M] if M else np.zeros((H + 1, 0), dtype=np.int64)
        cmd = int(tokens.commands[t])
        inputs.append(build_sequence(config.vocab, cmd, bev, tokens.traj_exec[frames]).ids)
        targets.append(build_sequence(config.vocab, cmd, bev, tokens.traj_expert[frames]).ids)
    if not inputs:
        width = config.seq_len
        return np.zeros((0, width), dtype=np.int64), np.zeros((0, width), dtype=np.int64)
    return np.stack(inputs), np.stack(targets)


def make_batch(inputs: np.ndarray, targets: np.ndarray, rewards=None, done=None) -> SequenceBatch:
    if len(inputs) == 0:
        raise SizeError("batch must contain at least one sequence")
    return SequenceBatch(
        torch.as_tensor(inputs, dtype=torch.long),
        torch.as_tensor(targets, dtype=torch.long),
        None if rewards is None else torch.as_tensor(rewards, dtype=torch.float32),
        None if done is None else torch.as_tensor(done, dtype=torch.float32),
    )
