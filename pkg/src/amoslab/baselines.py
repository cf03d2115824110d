"""Reference optimizers sharing the optim_core interface.

AdamW (decoupled weight decay, piecewise-linear or rsqrt schedule), AdaGrad,
and SGD with the 1/(1 + alpha*lambda*t) learning-rate schedule. Plain Adam is
AdamW with weight_decay = 0.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError
from .optim_core import ParamSpec

__all__ = [
    "AdamWHyperParams",
    "SGDHyperParams",
    "AdaGradHyperParams",
    "adamw_alpha",
    "adamw_step",
    "sgd_alpha",
    "sgd_step",
    "adagrad_step",
]


@dataclass(frozen=True)
class AdamWHyperParams:
    alpha: float
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    warmup_steps: int = 0
    max_steps: int | None = None
    epsilon: float = 1e-8
    schedule: str = "linear"  # linear | constant | rsqrt
    rsqrt_ref_step: int | None = None

    kind = "adamw"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        for name, b in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= b < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if self.schedule not in ("linear", "constant", "rsqrt"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "linear":
            if self.max_steps is None or self.max_steps <= self.warmup_steps:
                raise ConfigError("linear decay requires max_steps > warmup_steps")
        if self.schedule == "rsqrt" and (self.rsqrt_ref_step is None or self.rsqrt_ref_step < 1):
            raise ConfigError("rsqrt schedule requires rsqrt_ref_step >= 1")

    def init_slots(self, spec: ParamSpec) -> dict[str, np.ndarray]:
        return {"m": np.zeros(spec.shape), "v": np.zeros(spec.shape)}


@dataclass(frozen=True)
class SGDHyperParams:
    alpha: float
    lam: float = 0.0  # L2 strength, drives the 1/(1+alpha*lam*t) decay

    kind = "sgd"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be nonnegative")

    def init_slots(self, spec: ParamSpec) -> dict[str, np.ndarray]:
        return {}


@dataclass(frozen=True)
class AdaGradHyperParams:
    alpha: float
    epsilon: float = 1e-10

    kind = "adagrad"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")

    def init_slots(self, spec: ParamSpec) -> dict[str, np.ndarray]:
        return {"accum": np.zeros(spec.shape)}


def adamw_alpha(t: int, hp: AdamWHyperParams) -> float:
    """Schedule value at step t: linear warm-up, then the configured decay.

    The linear schedule is continuous, piecewise linear, and exactly 0 at
    t = max_steps. The rsqrt schedule holds the peak value through
    rsqrt_ref_step and decays proportionally to t^(-1/2) beyond it.
    """
    ramp = min(1.0, (t + 1) / max(1, hp.warmup_steps))
    if hp.schedule == "constant":
        return hp.alpha * ramp
    if hp.schedule == "rsqrt":
        if t <= hp.rsqrt_ref_step:
            return hp.alpha * ramp
        return hp.alpha * math.sqrt(hp.rsqrt_ref_step / t)
    decay = max(0.0, (hp.max_steps - t) / (hp.max_steps - hp.warmup_steps))
    return hp.alpha * min(ramp, decay)


def adamw_step(
    theta: np.ndarray,
    g: np.ndarray,
    slots: dict[str, np.ndarray],
    hp: AdamWHyperParams,
    t: int,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """delta = alpha_t * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)."""
    a_t = adamw_alpha(t, hp)
    m_new = hp.beta1 * slots["m"] + (1.0 - hp.beta1) * g
    v_new = hp.beta2 * slots["v"] + (1.0 - hp.beta2) * g * g
    m_hat = m_new / (1.0 - hp.beta1 ** (t + 1))
    v_hat = v_new / (1.0 - hp.beta2 ** (t + 1))
    delta = a_t * (m_hat / (np.sqrt(v_hat) + hp.epsilon) + hp.weight_decay * theta)
    if not np.all(np.isfinite(delta)):
        raise DivergenceError("non-finite update", step=t)
    return delta, {"m": m_new, "v": v_new}


def sgd_alpha(t: int, hp: SGDHyperParams) -> float:
    """alpha / (1 + alpha * lam * t); satisfies 1/alpha_{t+1} = 1/alpha_t + lam."""
    return hp.alpha / (1.0 + hp.alpha * hp.lam * t)


def sgd_step(theta: np.ndarray, g: np.ndarray, hp: SGDHyperParams, t: int) -> np.ndarray:
    a_t = sgd_alpha(t, hp)
    delta = a_t * (g + hp.lam * theta)
    if not np.all(np.isfinite(delta)):
        raise DivergenceError("non-finite update", step=t)
    return delta


def adagrad_step(
    theta: np.ndarray,
    g: np.ndarray,
    slots: dict[str, np.ndarray],
    hp: AdaGradHyperParams,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Accumulate squared gradients, then scale: delta = alpha * g / sqrt(accum)."""
    accum_new = slots["accum"] + g * g
    delta = hp.alpha * g / (np.sqrt(accum_new) + hp.epsilon)
    if not np.all(np.isfinite(delta)):
        raise DivergenceError("non-finite update")
    return delta, {"accum": accum_new}
