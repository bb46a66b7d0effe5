"""
Joint BEV + trajectory training with scheduled sampling.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from tqdm import tqdm

from errors import SizeError, TrainingError
from reports import write_csv
from traj_tokens.vocab import Modality

from .config import TrainConfig, scheduled_sampling_p
from .model import PlannerTransformer
from .sequence import SequenceBatch, legal_mask

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "total", "l_traj", "l_bev", "p", "grad_norm"]


@dataclass
class LossRecord:
    step: int
    total: float
    l_traj: float
    l_bev: float
    p: float
    grad_norm: float


def step_generator(seed: int, step: int) -> torch.Generator:
    """Per-step generator so a resumed run draws the same mixing coins."""
    return torch.Generator().manual_seed((int(seed) * 1_000_003 + int(step)) % (2**63 - 1))


def target_modality(model: PlannerTransformer, length: int) -> torch.Tensor:
    """Modality of the token each position predicts (position p -> p + 1)."""
    return model.modality_tags[1:length]


def head_losses(logits: torch.Tensor, targets: torch.Tensor, next_modality: torch.Tensor):
    """
    Per-token mean cross-entropy over the full vocabulary for the BEV and
    trajectory heads. logits/targets are (B, T) aligned; position p is scored
    against targets[:, p + 1].
    """
    scored = logits[:, :-1]
    labels = targets[:, 1:]
    nll = F.cross_entropy(scored.reshape(-1, scored.shape[-1]), labels.reshape(-1), reduction="none")
    nll = nll.view(labels.shape)
    zero = logits.new_zeros(())
    bev_mask = next_modality == Modality.BEV
    traj_mask = next_modality == Modality.TRAJ
    l_bev = nll[:, bev_mask].mean() if bool(bev_mask.any()) else zero
    l_traj = nll[:, traj_mask].mean() if bool(traj_mask.any()) else zero
    return l_bev, l_traj


def restrict_to_modality(logits: torch.Tensor, modality: torch.Tensor, model: PlannerTransformer) -> torch.Tensor:
    """Set logits outside each position's legal next-token range to -inf."""
    layout = model.config.vocab
    masks = torch.stack([legal_mask(layout, m) for m in Modality])
    allowed = masks[modality.long()]
    return logits.masked_fill(~allowed.unsqueeze(0), float("-inf"))


def mix_context(
    model: PlannerTransformer,
    inputs: torch.Tensor,
    p: float,
    generator: Optional[torch.Generator],
    mixing: str = "greedy",
) -> torch.Tensor:
    """
    Replace each context token after the command, independently with
    probability p, by the model's prediction for that position.
    """
    if p <= 0.0:
        return inputs
    T = inputs.shape[1]
    with torch.no_grad():
        logits = restrict_to_modality(model(inputs)[:, :-1], target_modality(model, T), model)
        if mixing == "sample":
            probs = F.softmax(logits, dim=-1)
            flat = torch.multinomial(probs.reshape(-1, probs.shape[-1]), 1, generator=generator)
            predicted = flat.view(probs.shape[:2])
        else:
            predicted = logits.argmax(dim=-1)
    coins = torch.rand(inputs.shape[0], T - 1, generator=generator) < p
    mixed = inputs.clone()
    mixed[:, 1:] = torch.where(coins, predicted, inputs[:, 1:])
    return mixed


def joint_loss(
    model: PlannerTransformer,
    batch: SequenceBatch,
    lambda_traj: float,
    lambda_bev: float,
    p: float = 0.0,
    generator: Optional[torch.Generator] = None,
    mixing: str = "greedy",
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(total, L_bev, L_traj); total = lambda_traj * L_traj + lambda_bev * L_bev."""
    if len(batch) == 0:
        raise SizeError("joint_loss needs a non-empty batch")
    context = mix_context(model, batch.inputs, p, generator, mixing)
    logits = model(context)
    l_bev, l_traj = head_losses(logits, batch.targets, target_modality(model, batch.inputs.shape[1]))
    total = lambda_traj * l_traj + lambda_bev * l_bev
    if model.config.aux_loss_coef > 0:
        total = total + model.config.aux_loss_coef * model.last_aux_loss
    return total, l_bev, l_traj


def make_optimizer(model: torch.nn.Module, config: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)


def train_step(
    model: PlannerTransformer,
    optimizer: torch.optim.Optimizer,
    batch: SequenceBatch,
    config: TrainConfig,
    p: float = 0.0,
    generator: Optional[torch.Generator] = None,
    step: int = 0,
) -> LossRecord:
    """One AdamW update with global-norm clipping."""
    model.train()
    optimizer.zero_grad(set_to_none=True)
    total, l_bev, l_traj = joint_loss(model, batch, config.lambda_traj, config.lambda_bev, p, generator, config.mixing)
    if not torch.isfinite(total):
        raise TrainingError(
            "non-finite training loss",
            {"step": step, "total": total.item(), "l_bev": l_bev.item(), "l_traj": l_traj.item(), "p": p},
        )
    total.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
    optimizer.step()
    return LossRecord(step, total.item(), l_traj.item(), l_bev.item(), float(p), grad_norm.item())


class Trainer:
    """
    Stage-I trainer: epochs of shuffled minibatches with the scheduled
    sampling ramp. Batch order and mixing coins depend only on the seeds and
    the (epoch, step) counters, so a resumed run continues bit-exactly.
    """

    def __init__(
        self,
        model: PlannerTransformer,
        config: TrainConfig,
        data_seed: int = 0,
        sampling_seed: int = 0,
        optimizer: Optional[torch.optim.Optimizer] = None,
        step: int = 0,
        epoch: int = 0,
    ):
        self.model = model
        self.config = config
        self.data_seed = data_seed
        self.sampling_seed = sampling_seed
        self.optimizer = optimizer or make_optimizer(model, config)
        self.step = step
        self.epoch = epoch
        self.history: List[LossRecord] = []

    def epoch_order(self, n_sequences: int, epoch: int) -> np.ndarray:
        rng = np.random.default_rng([self.data_seed, epoch])
        return rng.permutation(n_sequences)

    def run_epoch(self, inputs: np.ndarray, targets: np.ndarray, show_progress: bool = False) -> List[LossRecord]:
        if len(inputs) == 0:
            raise SizeError("no training windows")
        p = scheduled_sampling_p(self.epoch, self.config)
        order = self.epoch_order(len(inputs), self.epoch)
        bs = self.config.batch_size
        records = []
        chunks = range(0, len(order), bs)
        for start in tqdm(chunks, desc=f"epoch {self.epoch}", disable=not show_progress):
            idx = order[start : start + bs]
            batch = SequenceBatch(
                torch.as_tensor(inputs[idx], dtype=torch.long), torch.as_tensor(targets[idx], dtype=torch.long)
            )
            record = train_step(
                self.model, self.optimizer, batch, self.config, p, step_generator(self.sampling_seed, self.step), self.step
            )
            records.append(record)
            self.step += 1
        self.epoch += 1
        self.history.extend(records)
        return records

    def fit(
        self,
        inputs: np.ndarray,
        targets: np.ndarray,
        epochs: Optional[int] = None,
        show_progress: bool = False,
        on_epoch_end: Optional[Callable[["Trainer"], None]] = None,
    ) -> List[LossRecord]:
        target_epoch = self.config.epochs if epochs is None else self.epoch + epochs
        while self.epoch < target_epoch:
            records = self.run_epoch(inputs, targets, show_progress)
            mean_total = sum(r.total for r in records) / len(records)
            logger.info("epoch %d: mean loss %.4f (p=%.3f)", self.epoch - 1, mean_total, records[-1].p)
            if on_epoch_end is not None:
                on_epoch_end(self)
        return self.history


def write_training_log(records: Iterable[LossRecord], path: str, config_hash: str = "", seed: Optional[int] = None) -> str:
    return write_csv(path, LOG_COLUMNS, (asdict(r) for r in records), config_hash, seed)


def uniform_loss(vocab_size: int) -> float:
    return math.log(vocab_size)
