"""The Amos update rule over possibly reduced slot variables.

Per variable and step t (0-based), with g the gradient, theta the weights,
v and b slot tensors at the reduced shape, and M2 the quadratic mean taken
over each collapsed slice:

    g      <- g * chi / max(chi, |g|)                      (optional clipping)
    v'     <- beta * v + (1 - beta) * M2(g)^2
    v_hat  <- v' / (1 - beta^(t+1))                        (bias correction)
    c      <- (1 + p * b)^(-1/2)        p defaults to (1/4) sqrt(xi)
    d      <- (1 + q * b)^(-1)          q defaults to (1/4) sqrt(xi * eta)
    gamma  <- c * xi_t^2 * M2(g)^2 / v_hat                 (adaptive L2 strength)
    delta  <- d * (xi_t * eta * g / sqrt(v_hat) + gamma * theta / 2)
    b'     <- b + gamma * (1 + b)
    delta  <- m' <- mu * m + (1 - mu) * delta              (optional momentum)

xi_t is the warm-up-scaled global rate; the constants p and q are computed
from the configured peak xi. Slices whose gradient is exactly zero get
gamma = 0 and delta = 0 (before momentum), so unused variables are neither
moved nor regularized. The learning-rate decay is endogenous: b grows with
the accumulated regularization, so no maximum step count is ever needed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError
from .optim_core import ParamSpec
from .tensor import AxisMask, ensure_finite, m2_over_axes

__all__ = [
    "AmosHyperParams",
    "AmosSlots",
    "clip_gradient",
    "update_v",
    "bias_correct",
    "decay_factors",
    "compute_gamma",
    "warmup_scale",
    "amos_step",
]


@dataclass(frozen=True)
class AmosHyperParams:
    """Global knobs; the per-variable scale eta lives on :class:`ParamSpec`.

    ``c_const`` and ``d_const`` override the decay-factor constants p and q;
    left unset they default to (1/4) sqrt(xi) and (1/4) sqrt(xi * eta).
    """

    xi: float
    beta: float = 0.999
    mu: float | None = None
    chi: float | None = None
    warmup_steps: int = 0
    c_const: float | None = None
    d_const: float | None = None
    epsilon_guard: float = 1e-30

    kind = "amos"

    def __post_init__(self):
        if not self.xi > 0:
            raise ConfigError(f"xi must be positive, got {self.xi}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must be in [0, 1), got {self.beta}")
        if self.mu is not None and not 0.0 <= self.mu < 1.0:
            raise ConfigError(f"mu must be in [0, 1), got {self.mu}")
        if self.chi is not None and not self.chi > 0:
            raise ConfigError(f"chi must be positive, got {self.chi}")
        if self.warmup_steps < 0:
            raise ConfigError("warmup_steps must be nonnegative")
        if not self.epsilon_guard > 0:
            raise ConfigError("epsilon_guard must be positive")

    def p_const(self) -> float:
        return self.c_const if self.c_const is not None else 0.25 * math.sqrt(self.xi)

    def q_const(self, eta: float) -> float:
        return self.d_const if self.d_const is not None else 0.25 * math.sqrt(self.xi * eta)

    def init_slots(self, spec: ParamSpec) -> dict[str, np.ndarray]:
        shape = spec.reduced_shape
        slots = {"v": np.zeros(shape), "b": np.zeros(shape)}
        if self.mu is not None:
            slots["m"] = np.zeros(spec.shape)
        return slots


@dataclass(frozen=True)
class AmosSlots:
    """v, b at reduced shape; m (when momentum is on) at full shape."""

    v: np.ndarray
    b: np.ndarray
    m: np.ndarray | None = None

    @classmethod
    def from_dict(cls, slots: dict[str, np.ndarray]) -> "AmosSlots":
        return cls(v=slots["v"], b=slots["b"], m=slots.get("m"))

    def to_dict(self) -> dict[str, np.ndarray]:
        out = {"v": self.v, "b": self.b}
        if self.m is not None:
            out["m"] = self.m
        return out


def clip_gradient(g: np.ndarray, chi: float) -> np.ndarray:
    """Scale each entry by chi / max(chi, |g|): clamp to [-chi, chi], sign kept."""
    if not chi > 0:
        raise ConfigError(f"chi must be positive, got {chi}")
    return g * (chi / np.maximum(chi, np.abs(g)))


def update_v(v: np.ndarray, g: np.ndarray, beta: float, mask: AxisMask) -> np.ndarray:
    """Running average of squared slice quadratic means."""
    m2g = m2_over_axes(g, mask)
    if v.shape != m2g.shape:
        raise ShapeError(
            f"v shape {v.shape} does not match reduced shape {mask.reduced_shape(g.shape)}"
        )
    return ensure_finite(beta * v + (1.0 - beta) * m2g**2, "update_v")


def bias_correct(v: np.ndarray, beta: float, t: int) -> np.ndarray:
    """v / (1 - beta^t); t counts applied accumulations and must be >= 1."""
    if t < 1:
        raise ValueError("bias correction requires at least one accumulation (t >= 1)")
    return v / (1.0 - beta**t)


def decay_factors(
    b: np.ndarray,
    xi: float,
    eta: float,
    c_const: float | None = None,
    d_const: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """c = (1 + p b)^(-1/2) and d = (1 + q b)^(-1); both 1 at b = 0.

    For large b they behave like 1/sqrt(p b) and 1/(q b), so the learning
    rate decays roughly as the inverse of the accumulated regularization.
    """
    p = c_const if c_const is not None else 0.25 * math.sqrt(xi)
    q = d_const if d_const is not None else 0.25 * math.sqrt(xi * eta)
    b = np.asarray(b, dtype=np.float64)
    c = (1.0 + p * b) ** -0.5
    d = (1.0 + q * b) ** -1.0
    return c, d


def compute_gamma(
    g: np.ndarray,
    v_hat: np.ndarray,
    c: np.ndarray,
    xi: float,
    mask: AxisMask,
    guard: float = 1e-30,
) -> np.ndarray:
    """Adaptive L2 strength c * xi^2 * M2(g)^2 / v_hat at reduced shape.

    Exactly zero on slices whose gradient is all zero; the division is
    short-circuited there, so no guard value ever leaks into gamma.
    """
    m2g = m2_over_axes(g, mask)
    denom = np.maximum(np.sqrt(v_hat), guard)
    r = m2g / denom
    return np.where(m2g != 0.0, c * (xi * xi) * (r * r), 0.0)


def warmup_scale(t: int, warmup_steps: int, xi: float) -> float:
    """Linear ramp: xi * min(1, (t+1) / warmup_steps); xi when warm-up is off."""
    if warmup_steps < 0:
        raise ConfigError("warmup_steps must be nonnegative")
    return xi * min(1.0, (t + 1) / max(1, warmup_steps))


def amos_step(
    theta: np.ndarray,
    g: np.ndarray,
    slots: AmosSlots,
    spec: ParamSpec,
    hp: AmosHyperParams,
    t: int,
) -> tuple[np.ndarray, AmosSlots]:
    """One update for one variable; returns (delta, new slots), inputs untouched."""
    mask = spec.reduction
    chi = spec.clip_threshold if spec.clip_threshold is not None else hp.chi
    if chi is not None:
        g = clip_gradient(g, chi)

    v_new = update_v(slots.v, g, hp.beta, mask)
    v_hat = bias_correct(v_new, hp.beta, t + 1)
    c, d = decay_factors(slots.b, hp.xi, spec.eta, hp.c_const, hp.d_const)
    xi_t = warmup_scale(t, hp.warmup_steps, hp.xi)
    gamma = compute_gamma(g, v_hat, c, xi_t, mask, hp.epsilon_guard)

    denom = np.maximum(np.sqrt(v_hat), hp.epsilon_guard)
    delta = d * (xi_t * spec.eta * (g / denom) + 0.5 * gamma * theta)
    b_new = slots.b + gamma * (1.0 + slots.b)

    m_new = None
    if slots.m is not None:
        if hp.mu is None:
            raise ConfigError(f"{spec.name}: momentum slot present but mu is unset")
        m_new = hp.mu * slots.m + (1.0 - hp.mu) * delta
        delta = m_new

    if not np.all(np.isfinite(delta)):
        raise DivergenceError("non-finite update", param=spec.name, step=t)
    return delta, AmosSlots(v=v_new, b=b_new, m=m_new)
