"""
Central finite-difference check of autograd gradients.
"""

from typing import Callable, Iterable, Optional

import torch

from .sequence import SequenceBatch
from .training import joint_loss

DEFAULT_EPSILON = 1e-4
DEFAULT_MAX_CHECKED = 10_000
RELATIVE_FLOOR = 1e-6


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), RELATIVE_FLOOR)


def check_function(
    loss_fn: Callable[[], torch.Tensor],
    params: Iterable[torch.nn.Parameter],
    epsilon: float = DEFAULT_EPSILON,
    max_checked: int = DEFAULT_MAX_CHECKED,
) -> float:
    """Max relative error between autograd and central differences of loss_fn."""
    params = list(params)
    for p in params:
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in params]

    worst = 0.0
    checked = 0
    with torch.no_grad():
        for p, grad in zip(params, analytic):
            flat, gflat = p.view(-1), grad.view(-1)
            stride = max(1, flat.numel() * len(params) // max(1, max_checked))
            for i in range(0, flat.numel(), stride):
                if checked >= max_checked:
                    return worst
                orig = flat[i].item()
                flat[i] = orig + epsilon
                plus = loss_fn().item()
                flat[i] = orig - epsilon
                minus = loss_fn().item()
                flat[i] = orig
                numeric = (plus - minus) / (2.0 * epsilon)
                worst = max(worst, relative_error(gflat[i].item(), numeric))
                checked += 1
    return worst


def grad_check(
    model: torch.nn.Module,
    batch: SequenceBatch,
    epsilon: float = DEFAULT_EPSILON,
    param_names: Optional[Iterable[str]] = None,
    lambda_traj: float = 1.0,
    lambda_bev: float = 1.0,
    max_checked: int = DEFAULT_MAX_CHECKED,
) -> float:
    """
    Check the teacher-forced joint loss on a float64 copy of the model.

    `param_names` restricts the check to a subset (e.g. ["head.weight"]).
    """
    shadow = type(model)(model.config)
    shadow.load_state_dict(model.state_dict())
    shadow.double()
    shadow.train()
    named = dict(shadow.named_parameters())
    names = list(param_names) if param_names is not None else list(named)
    params = [named[n] for n in names]

    def loss_fn() -> torch.Tensor:
        total, _, _ = joint_loss(shadow, batch, lambda_traj, lambda_bev, p=0.0)
        return total

    return check_function(loss_fn, params, epsilon, max_checked)
