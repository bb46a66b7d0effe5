"""
Bounded geometry rewards and the low-speed-masked comfort penalty.
"""

from dataclasses import dataclass

from pydantic import BaseModel, ConfigDict, Field

from errors import DomainError

DEFAULT_SIGMA_CTR = 1.5
DEFAULT_SIGMA_CLR = 3.0
DEFAULT_LAMBDA_DELTA_A = 0.1
DEFAULT_LAMBDA_ALPHA = 0.1
DEFAULT_EPS_SPEED = 0.3


class RewardWeights(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    w_ctr: float = 1.0
    w_clr: float = 1.0
    w_comf: float = 1.0
    sigma_ctr: float = Field(DEFAULT_SIGMA_CTR, gt=0.0)
    sigma_clr: float = Field(DEFAULT_SIGMA_CLR, gt=0.0)
    lambda_delta_a: float = DEFAULT_LAMBDA_DELTA_A
    lambda_alpha: float = DEFAULT_LAMBDA_ALPHA
    eps_speed: float = Field(DEFAULT_EPS_SPEED, ge=0.0)


@dataclass(frozen=True)
class RewardComponents:
    r_ctr: float
    r_clr: float
    r_comf: float

    def as_dict(self):
        return {"r_ctr": self.r_ctr, "r_clr": self.r_clr, "r_comf": self.r_comf}


def _check_distance(d: float, name: str) -> None:
    if not d >= 0:
        raise DomainError(f"{name} distance must be non-negative, got {d}")


def reward_centerline(d_ctr: float, sigma_ctr: float = DEFAULT_SIGMA_CTR) -> float:
    _check_distance(d_ctr, "centerline")
    return max(1.0 - d_ctr / sigma_ctr, 0.0)


def reward_clearance(d_clr: float, sigma_clr: float = DEFAULT_SIGMA_CLR) -> float:
    _check_distance(d_clr, "clearance")
    return d_clr / sigma_clr


def reward_comfort(delta_a: float, alpha: float, v: float, weights: RewardWeights = RewardWeights()) -> float:
    if abs(v) <= weights.eps_speed:
        return 0.0
    return -(weights.lambda_delta_a * abs(delta_a) + weights.lambda_alpha * abs(alpha))


def reward_total(components: RewardComponents, weights: RewardWeights = RewardWeights()) -> float:
    return weights.w_ctr * components.r_ctr + weights.w_clr * components.r_clr + weights.w_comf * components.r_comf


def frame_components(
    d_ctr: float, d_clr: float, delta_a: float, alpha: float, v: float, weights: RewardWeights = RewardWeights()
) -> RewardComponents:
    return RewardComponents(
        reward_centerline(d_ctr, weights.sigma_ctr),
        reward_clearance(d_clr, weights.sigma_clr),
        reward_comfort(delta_a, alpha, v, weights),
    )
