"""
Planner model and training configuration.
"""

from typing import Any, Dict, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import ConfigurationError
from traj_tokens.vocab import VocabLayout

DEFAULT_D_MODEL = 64
DEFAULT_N_LAYERS = 2
DEFAULT_N_HEADS = 4
DEFAULT_N_EXPERTS = 4
DEFAULT_TOP_K = 2
DEFAULT_HISTORY = 3
DEFAULT_BEV_TOKENS = 64

DEFAULT_LAMBDA_TRAJ = 1.0
DEFAULT_LAMBDA_BEV = 0.1
DEFAULT_LR = 1e-4
DEFAULT_WEIGHT_DECAY = 1e-4
DEFAULT_GRAD_CLIP = 1.0
DEFAULT_BATCH_SIZE = 16
DEFAULT_EPOCHS = 16
DEFAULT_BC_EPOCHS = 4
DEFAULT_N_STEP = 3

T = TypeVar("T", bound=BaseModel)


def required_seq_len(history: int, bev_tokens_per_frame: int) -> int:
    """One command token plus (H + 1) frames of M BEV tokens and one trajectory token."""
    return 1 + (history + 1) * (bev_tokens_per_frame + 1)


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(DEFAULT_D_MODEL, ge=1)
    n_layers: int = Field(DEFAULT_N_LAYERS, ge=1)
    n_heads: int = Field(DEFAULT_N_HEADS, ge=1)
    n_experts: int = Field(DEFAULT_N_EXPERTS, ge=1)
    top_k: int = Field(DEFAULT_TOP_K, ge=1)
    d_ff: Optional[int] = None
    vocab: VocabLayout = VocabLayout()
    history: int = Field(DEFAULT_HISTORY, ge=0)
    bev_tokens_per_frame: int = Field(DEFAULT_BEV_TOKENS, ge=0)
    max_seq_len: Optional[int] = None
    moe_every_layer: bool = True
    aux_loss_coef: float = Field(0.0, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if self.top_k > self.n_experts:
            raise ValueError(f"top_k={self.top_k} exceeds n_experts={self.n_experts}")
        needed = required_seq_len(self.history, self.bev_tokens_per_frame)
        if self.max_seq_len is not None and self.max_seq_len < needed:
            raise ValueError(f"max_seq_len={self.max_seq_len} is shorter than the {needed} tokens a window needs")
        return self

    @property
    def ff_dim(self) -> int:
        return self.d_ff or 2 * self.d_model

    @property
    def seq_len(self) -> int:
        return self.max_seq_len or required_seq_len(self.history, self.bev_tokens_per_frame)

    @property
    def vocab_size(self) -> int:
        return self.vocab.total

    def layer_uses_moe(self, index: int) -> bool:
        return self.moe_every_layer or index % 2 == 1


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lambda_traj: float = Field(DEFAULT_LAMBDA_TRAJ, ge=0.0)
    lambda_bev: float = Field(DEFAULT_LAMBDA_BEV, ge=0.0)
    lr: float = Field(DEFAULT_LR, gt=0.0)
    weight_decay: float = Field(DEFAULT_WEIGHT_DECAY, ge=0.0)
    grad_clip: float = Field(DEFAULT_GRAD_CLIP, ge=0.0)
    batch_size: int = Field(DEFAULT_BATCH_SIZE, ge=1)
    epochs: int = Field(DEFAULT_EPOCHS, ge=0)
    bc_epochs: int = Field(DEFAULT_BC_EPOCHS, ge=0)
    ramp_end_epoch: int = Field(DEFAULT_EPOCHS, ge=1)
    mixing: Literal["greedy", "sample"] = "greedy"
    n_step: int = Field(DEFAULT_N_STEP, ge=1)

    @model_validator(mode="after")
    def _check_ramp(self):
        if self.ramp_end_epoch <= self.bc_epochs:
            raise ValueError("ramp_end_epoch must be after bc_epochs")
        return self


def scheduled_sampling_p(epoch: int, config: TrainConfig) -> float:
    """
    Probability of replacing a context token by a model prediction.

    Zero for the first `bc_epochs` epochs (0-based), then a linear ramp that
    reaches 1 at epoch `ramp_end_epoch - 1`.
    """
    if epoch < config.bc_epochs:
        return 0.0
    span = config.ramp_end_epoch - config.bc_epochs
    return min(1.0, (epoch - config.bc_epochs + 1) / span)


def build_config(cls: Type[T], data: Optional[Dict[str, Any]] = None, **overrides) -> T:
    """Validate a config section, reporting failures as ConfigurationError."""
    payload = dict(data or {})
    payload.update(overrides)
    try:
        return cls.model_validate(payload)
    except ValidationError as e:
        raise ConfigurationError(f"invalid {cls.__name__}: {e}") from e
