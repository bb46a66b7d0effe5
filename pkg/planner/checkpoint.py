"""
Checkpoint files.

Layout: magic `DAPCKPT1`, uint32 header length, sorted-key JSON header, then
every state_dict tensor as little-endian float32 in state_dict order, then the
AdamW first and second moments of every parameter in the same order.
"""

import json
import logging
import os
import struct
from typing import Any, Dict, Optional, Tuple

import numpy as np
import torch

from errors import DatasetIOError, ValidationError

from .config import ModelConfig
from .model import PlannerTransformer, init_model

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DAPCKPT1"
FORMAT_VERSION = 1


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return t.detach().cpu().to(torch.float32).numpy().astype("<f4").tobytes(order="C")


def save_checkpoint(
    path: str,
    model: PlannerTransformer,
    optimizer: Optional[torch.optim.Optimizer] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    state = model.state_dict()
    params = list(model.parameters())
    opt_state = optimizer.state if optimizer is not None else {}
    # experts that were never routed to have no optimizer state yet
    steps = [float(opt_state[p]["step"]) if "exp_avg" in opt_state.get(p, {}) else None for p in params]
    has_moments = any(s is not None for s in steps)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.model_dump(mode="json"),
        "tensors": [[name, list(t.shape)] for name, t in state.items()],
        "optimizer_moments": has_moments,
        "optimizer_steps": steps if has_moments else [],
    }
    header.update(extra or {})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for tensor in state.values():
                f.write(_tensor_bytes(tensor))
            if has_moments:
                for p, step in zip(params, steps):
                    if step is None:
                        continue
                    f.write(_tensor_bytes(opt_state[p]["exp_avg"]))
                    f.write(_tensor_bytes(opt_state[p]["exp_avg_sq"]))
    except OSError as e:
        raise DatasetIOError(f"cannot write checkpoint: {e}", path) from e
    logger.info("saved checkpoint %s", path)
    return path


def read_header(path: str) -> Tuple[Dict[str, Any], bytes, int]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DatasetIOError(f"cannot read checkpoint: {e}", path) from e
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValidationError(f"{path} is not a planner checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    (size,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    header = json.loads(blob[offset : offset + size].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {header.get('format_version')}")
    return header, blob, offset + size


def load_checkpoint(path: str, optimizer_factory=None):
    """
    Returns (model, optimizer or None, header). `optimizer_factory(model)`
    builds the optimizer whose moments are restored.
    """
    header, blob, offset = read_header(path)
    config = ModelConfig.model_validate(header["model_config"])
    model = init_model(config, config.seed)
    state = model.state_dict()
    names = [name for name, _ in header["tensors"]]
    if names != list(state.keys()):
        raise ValidationError(f"{path}: tensor list does not match the model architecture")

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        return torch.from_numpy(arr.astype(np.float32))

    loaded = {name: take(shape) for name, shape in header["tensors"]}
    model.load_state_dict(loaded)

    optimizer = None
    if optimizer_factory is not None:
        optimizer = optimizer_factory(model)
        if header.get("optimizer_moments"):
            params = list(model.parameters())
            for p, step in zip(params, header["optimizer_steps"]):
                if step is None:
                    continue
                exp_avg = take(list(p.shape))
                exp_avg_sq = take(list(p.shape))
                optimizer.state[p] = {
                    "step": torch.tensor(step, dtype=torch.float32),
                    "exp_avg": exp_avg,
                    "exp_avg_sq": exp_avg_sq,
                }
    if offset > len(blob):
        raise ValidationError(f"{path}: truncated checkpoint")
    return model, optimizer, header
