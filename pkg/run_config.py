"""
Run configuration: one JSON document with a section per component.

Sources are layered file -> environment (DAP_*) -> explicit arguments, later
ones win. Unknown keys are rejected at every level. The config hash and the
named seed streams make every artifact traceable to the configuration that
produced it.
"""

import hashlib
import json
import logging
import os
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from bev_quantizer import BevConfig
from errors import ConfigurationError, DatasetIOError
from offline_rl.rewards import RewardWeights
from offline_rl.sacbc import SacBcConfig
from planner.config import ModelConfig, TrainConfig
from posttune import SmootherWeights
from sim_world.dataset import SimConfig
from sim_world.scene import DIFFICULTIES
from traj_tokens import get_scheme, list_schemes
from traj_tokens.benchmark import DEFAULT_CI_LEVELS, DEFAULT_HORIZONS_S

# Configuration Constants
DEFAULT_SEED = 0
DEFAULT_JOBS = 1
DEFAULT_OUT_DIR = "runs/default"
DEFAULT_LOG_LEVEL = "INFO"
HASH_CHARS = 16

SEED_STREAMS = ("data", "init", "sampling", "rl", "codebook", "eval")

DEFAULT_BENCH_SCHEMES = [
    "identity",
    "fb-ka-A",
    "fb-ka-B",
    "fb-ka-C",
    "fb-ka-D",
    "fb-xy-A",
    "fb-xy-B",
    "fb-xy-C",
    "fb-xy-D",
    "dct-xy-A",
    "dct-xy-B",
    "dct-ka-C",
    "dct-ka-D",
]


class TokenizerConfig(BaseModel):
    """Reconstruction benchmark settings; the action grid itself is sim.scheme."""

    model_config = ConfigDict(extra="forbid")

    bench_schemes: List[str] = DEFAULT_BENCH_SCHEMES
    horizons_s: List[float] = list(DEFAULT_HORIZONS_S)
    ci_levels: List[float] = list(DEFAULT_CI_LEVELS)
    n_windows: int = Field(2000, ge=1)

    @field_validator("bench_schemes")
    @classmethod
    def _registered(cls, value: List[str]) -> List[str]:
        unknown = [name for name in value if name not in list_schemes()]
        if unknown:
            raise ValueError(f"unknown schemes {unknown}; available: {list_schemes()}")
        return value


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(40, ge=1)
    n_scenes: int = Field(20, ge=0)
    difficulties: List[str] = ["easy", "medium", "hard"]
    horizons_s: List[float] = list(DEFAULT_HORIZONS_S)
    window_stride: int = Field(4, ge=1)
    plan_steps: int = Field(8, ge=3)
    mode: str = "greedy"

    @field_validator("difficulties")
    @classmethod
    def _known(cls, value: List[str]) -> List[str]:
        unknown = [d for d in value if d not in DIFFICULTIES]
        if unknown or not value:
            raise ValueError(f"difficulties must be a non-empty subset of {sorted(DIFFICULTIES)}, got {value}")
        return value


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sim: SimConfig = SimConfig()
    bev: BevConfig = BevConfig()
    tokenizer: TokenizerConfig = TokenizerConfig()
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    sacbc: SacBcConfig = SacBcConfig()
    rewards: RewardWeights = RewardWeights()
    posttune: SmootherWeights = SmootherWeights()
    eval: EvalConfig = EvalConfig()
    seed: int = DEFAULT_SEED
    jobs: int = Field(DEFAULT_JOBS, ge=1)
    out_dir: str = DEFAULT_OUT_DIR

    @model_validator(mode="after")
    def _check_vocab(self):
        layout = self.model.vocab
        n_traj = get_scheme(self.sim.scheme).codebook_size
        if layout.n_traj != n_traj:
            raise ValueError(f"model.vocab.n_traj={layout.n_traj} but scheme {self.sim.scheme} has {n_traj} tokens")
        if layout.n_bev != self.bev.codebook_size:
            raise ValueError(f"model.vocab.n_bev={layout.n_bev} but bev.codebook_size={self.bev.codebook_size}")
        M = self.model.bev_tokens_per_frame
        if M not in (0, self.bev.tokens_per_frame):
            raise ValueError(
                f"model.bev_tokens_per_frame={M} must be 0 (trajectory only) or {self.bev.tokens_per_frame}"
            )
        return self

    @property
    def hash(self) -> str:
        return config_hash(self)

    def section_hash(self, *names: str) -> str:
        return config_hash({name: getattr(self, name) for name in names})

    @property
    def dataset_hash(self) -> str:
        return self.section_hash("sim", "bev", "rewards")

    @property
    def checkpoint_hash(self) -> str:
        return config_hash({"model": self.model, "scheme": self.sim.scheme, "dt": self.sim.dt})

    def action_scheme(self):
        return get_scheme(self.sim.scheme, dt=self.sim.dt)

    def stream(self, name: str) -> int:
        return seed_stream(self.seed, name)


def _dump(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, dict):
        return {k: _dump(v) for k, v in value.items()}
    return value


def config_hash(value: Any) -> str:
    """First 16 hex chars of SHA-256 over the sorted-key JSON dump."""
    canonical = json.dumps(_dump(value), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:HASH_CHARS]


def seed_stream(root_seed: int, name: str) -> int:
    """Independent 31-bit seed for a named sub-stream of the root seed."""
    if name not in SEED_STREAMS:
        raise ConfigurationError(f"unknown seed stream '{name}', expected one of {SEED_STREAMS}")
    digest = hashlib.sha256(f"{int(root_seed)}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def _read_file(path: str) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise DatasetIOError(f"cannot read config: {e}", path) from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be an object")
    return data


def _env_overrides() -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    if os.getenv("DAP_SEED"):
        out["seed"] = int(os.getenv("DAP_SEED"))
    if os.getenv("DAP_JOBS"):
        out["jobs"] = int(os.getenv("DAP_JOBS"))
    if os.getenv("DAP_OUT_DIR"):
        out["out_dir"] = os.getenv("DAP_OUT_DIR")
    return out


def load_run_config(
    path: Optional[str] = None,
    seed: Optional[int] = None,
    jobs: Optional[int] = None,
    out_dir: Optional[str] = None,
) -> RunConfig:
    load_dotenv()
    data = _read_file(path) if path else {}
    try:
        data.update(_env_overrides())
    except ValueError as e:
        raise ConfigurationError(f"invalid DAP_* environment value: {e}") from e
    explicit = {"seed": seed, "jobs": jobs, "out_dir": out_dir}
    data.update({k: v for k, v in explicit.items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


def log_level() -> str:
    level = os.getenv("DAP_LOG_LEVEL", DEFAULT_LOG_LEVEL).upper()
    # unknown names fall back to the default
    return level if isinstance(logging.getLevelName(level), int) else DEFAULT_LOG_LEVEL
