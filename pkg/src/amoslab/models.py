"""Desk-scale differentiable models with exact, hand-derived gradients.

Three training targets: a stochastic quadratic bowl, a LayerNorm -> Linear ->
GELU -> Linear regression head, and a single LSTM cell unrolled over a short
sequence. Gradients are reverse-mode by hand (no autodiff engine); each one is
pinned by a central finite-difference oracle in the test suite.

Data is synthetic and replay-exact: a counter-based generator (Philox) keyed
by (seed, stream) and advanced by the batch index produces the same batch for
the same identity no matter what was drawn before. Targets come from a fixed
ground-truth mapping drawn once per model seed, so every task is realizable.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .eta_rules import (
    ACTIVATION_OUTPUT_RANGE,
    LAYERNORM_OUTPUT_RANGE,
    LayerDecl,
    RangeSpec,
    resolve_etas,
)
from .tensor import m2

__all__ = [
    "TRAIN_STREAM",
    "EVAL_STREAM",
    "INIT_STREAM",
    "TRUTH_STREAM",
    "batch_rng",
    "Batch",
    "QuadraticModel",
    "MlpModel",
    "LstmCellModel",
    "quadratic_model",
    "mlp_model",
    "lstm_cell_model",
    "gelu",
    "gelu_grad",
]

TRAIN_STREAM = 0
EVAL_STREAM = 1
INIT_STREAM = 2
TRUTH_STREAM = 3

_LN_EPS = 1e-6
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def batch_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    """Deterministic generator for one batch identity (seed, stream, index)."""
    if seed < 0 or stream < 0 or index < 0:
        raise ValueError("seed, stream, and index must be nonnegative")
    bits = np.random.Philox(key=np.array([seed, stream], dtype=np.uint64))
    bits = bits.advance(index << 64)
    return np.random.Generator(bits)


@dataclass(frozen=True)
class Batch:
    """One training batch plus the identity it was generated from."""

    inputs: np.ndarray
    targets: np.ndarray
    index: int

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must share the leading dimension")


def _scaled_draw(rng: np.random.Generator, shape: tuple[int, ...], scale: float) -> np.ndarray:
    """Gaussian draw rescaled so its quadratic mean is exactly ``scale``."""
    raw = rng.standard_normal(shape)
    return raw * (scale / m2(raw))


def gelu(x: np.ndarray, approximate: bool = False) -> np.ndarray:
    """GELU, exact Gaussian-CDF form by default; tanh approximation on request."""
    if approximate:
        u = math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)
        return 0.5 * x * (1.0 + np.tanh(u))
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray, approximate: bool = False) -> np.ndarray:
    if approximate:
        k = math.sqrt(2.0 / math.pi)
        u = k * (x + 0.044715 * x**3)
        t = np.tanh(u)
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3 * 0.044715 * x**2)
    phi = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * phi


class QuadraticModel:
    """Stochastic quadratic bowl around a fixed optimum theta_star.

    Per example e with noise n_e the loss is 0.5 * ||theta - theta_star + n_e||^2,
    averaged over the batch; the gradient is theta - theta_star + mean(n_e).
    theta_star is drawn once per seed with quadratic mean exactly target_scale.
    """

    name = "quadratic"

    def __init__(self, dim: int, target_scale: float, noise_scale: float = 0.1, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if not target_scale > 0:
            raise ValueError("target_scale must be positive")
        self.dim = dim
        self.target_scale = target_scale
        self.noise_scale = noise_scale
        self.seed = seed
        self.theta_star = _scaled_draw(batch_rng(seed, TRUTH_STREAM, 0), (dim,), target_scale)

    def param_layout(self):
        return [("theta", (self.dim,), ("other", None))]

    def etas(self) -> dict[str, float]:
        return {"theta": self.target_scale}

    def init_params(self) -> dict[str, np.ndarray]:
        rng = batch_rng(self.seed, INIT_STREAM, 0)
        return {"theta": _scaled_draw(rng, (self.dim,), 0.1 * self.target_scale)}

    def batch(self, stream: int, index: int, batch_size: int) -> Batch:
        rng = batch_rng(self.seed, stream, index)
        noise = self.noise_scale * rng.standard_normal((batch_size, self.dim))
        return Batch(inputs=noise, targets=np.zeros_like(noise), index=index)

    def loss(self, params: dict[str, np.ndarray], batch: Batch) -> float:
        resid = params["theta"] - self.theta_star + batch.inputs
        return float(0.5 * np.mean(np.sum(resid * resid, axis=1)))

    def loss_and_grads(self, params, batch):
        resid = params["theta"] - self.theta_star + batch.inputs
        loss = float(0.5 * np.mean(np.sum(resid * resid, axis=1)))
        return loss, {"theta": np.mean(resid, axis=0)}


class MlpModel:
    """LayerNorm -> Linear -> GELU -> Linear regression against a fixed teacher.

    The teacher shares the architecture and its weights are drawn at exactly
    the scales the eta rules assign, so the trained optimum sits at those
    scales by construction. Loss is the mean squared error over all output
    entries.
    """

    name = "mlp"

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        output_dim: int,
        seed: int = 0,
        activation: str = "exact",
        target_noise: float = 0.0,
    ):
        if min(input_dim, hidden_dim, output_dim) < 1:
            raise ValueError("all dimensions must be >= 1")
        if activation not in ("exact", "tanh"):
            raise ValueError("activation must be 'exact' or 'tanh'")
        if target_noise < 0:
            raise ValueError("target_noise must be nonnegative")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.output_dim = output_dim
        self.seed = seed
        self.approximate = activation == "tanh"
        self.target_noise = target_noise
        self._etas = resolve_etas(self._layer_decls())
        self.teacher = self._draw_params(batch_rng(seed, TRUTH_STREAM, 0), scale_factor=1.0)

    def _layer_decls(self) -> list[LayerDecl]:
        one = RangeSpec(1.0)
        return [
            LayerDecl("ln/scale", "layernorm_scale"),
            LayerDecl(
                "dense1/kernel",
                "linear_kernel",
                input_range=RangeSpec(LAYERNORM_OUTPUT_RANGE),
                output_range=one,
                input_dim=self.input_dim,
            ),
            LayerDecl("dense1/bias", "linear_bias", output_range=one),
            LayerDecl(
                "dense2/kernel",
                "linear_kernel",
                input_range=RangeSpec(ACTIVATION_OUTPUT_RANGE),
                output_range=one,
                input_dim=self.hidden_dim,
            ),
            LayerDecl("dense2/bias", "linear_bias", output_range=one),
        ]

    def param_layout(self):
        din, dh, dout = self.input_dim, self.hidden_dim, self.output_dim
        return [
            ("ln/scale", (din,), ("other", None)),
            ("dense1/kernel", (din, dh), ("kernel", 0)),
            ("dense1/bias", (dh,), ("other", None)),
            ("dense2/kernel", (dh, dout), ("kernel", 0)),
            ("dense2/bias", (dout,), ("other", None)),
        ]

    def etas(self) -> dict[str, float]:
        return dict(self._etas)

    def _draw_params(self, rng: np.random.Generator, scale_factor: float) -> dict[str, np.ndarray]:
        return {
            name: _scaled_draw(rng, shape, scale_factor * self._etas[name])
            for name, shape, _ in self.param_layout()
        }

    def init_params(self) -> dict[str, np.ndarray]:
        return self._draw_params(batch_rng(self.seed, INIT_STREAM, 0), scale_factor=0.5)

    def _forward(self, params, x):
        mu = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        xn = (x - mu) / np.sqrt(var + _LN_EPS)
        h0 = xn * params["ln/scale"]
        a1 = h0 @ params["dense1/kernel"] + params["dense1/bias"]
        h1 = gelu(a1, self.approximate)
        a2 = h1 @ params["dense2/kernel"] + params["dense2/bias"]
        return xn, h0, a1, h1, a2

    def batch(self, stream: int, index: int, batch_size: int) -> Batch:
        rng = batch_rng(self.seed, stream, index)
        x = rng.standard_normal((batch_size, self.input_dim))
        *_, targets = self._forward(self.teacher, x)
        if self.target_noise > 0:
            targets = targets + self.target_noise * rng.standard_normal(targets.shape)
        return Batch(inputs=x, targets=targets, index=index)

    def loss(self, params, batch) -> float:
        *_, a2 = self._forward(params, batch.inputs)
        return float(np.mean((a2 - batch.targets) ** 2))

    def loss_and_grads(self, params, batch):
        xn, h0, a1, h1, a2 = self._forward(params, batch.inputs)
        err = a2 - batch.targets
        loss = float(np.mean(err * err))

        d_a2 = 2.0 * err / err.size
        d_w2 = h1.T @ d_a2
        d_b2 = d_a2.sum(axis=0)
        d_h1 = d_a2 @ params["dense2/kernel"].T
        d_a1 = d_h1 * gelu_grad(a1, self.approximate)
        d_w1 = h0.T @ d_a1
        d_b1 = d_a1.sum(axis=0)
        d_h0 = d_a1 @ params["dense1/kernel"].T
        d_ln = (d_h0 * xn).sum(axis=0)
        return loss, {
            "ln/scale": d_ln,
            "dense1/kernel": d_w1,
            "dense1/bias": d_b1,
            "dense2/kernel": d_w2,
            "dense2/bias": d_b2,
        }


class LstmCellModel:
    """One LSTM cell unrolled over a short sequence, squared loss on the hidden state.

    Gate pre-activations use a single combined kernel over [x_t, h_{t-1}] in
    gate order (input, forget, cell, output). Targets are the hidden states of
    a teacher cell whose kernel is drawn at the scale the linear-kernel rule
    assigns for the declared input scale.
    """

    name = "lstm"

    def __init__(
        self,
        input_dim: int,
        hidden_dim: int,
        seq_len: int = 3,
        input_scale: float = 0.5,
        seed: int = 0,
    ):
        if min(input_dim, hidden_dim, seq_len) < 1:
            raise ValueError("dimensions and sequence length must be >= 1")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.seq_len = seq_len
        self.input_scale = input_scale
        self.seed = seed
        self._etas = resolve_etas(
            [
                LayerDecl(
                    "cell/kernel",
                    "linear_kernel",
                    input_range=RangeSpec(input_scale),
                    output_range=RangeSpec(1.0),
                    input_dim=input_dim + hidden_dim,
                ),
                LayerDecl("cell/bias", "linear_bias", output_range=RangeSpec(1.0)),
            ]
        )
        self.teacher = self._draw_params(batch_rng(seed, TRUTH_STREAM, 0), scale_factor=1.0)

    def param_layout(self):
        din, dh = self.input_dim, self.hidden_dim
        return [
            ("cell/kernel", (din + dh, 4 * dh), ("kernel", 0)),
            ("cell/bias", (4 * dh,), ("other", None)),
        ]

    def etas(self) -> dict[str, float]:
        return dict(self._etas)

    def _draw_params(self, rng, scale_factor: float) -> dict[str, np.ndarray]:
        return {
            name: _scaled_draw(rng, shape, scale_factor * self._etas[name])
            for name, shape, _ in self.param_layout()
        }

    def init_params(self) -> dict[str, np.ndarray]:
        return self._draw_params(batch_rng(self.seed, INIT_STREAM, 0), scale_factor=0.5)

    def _forward(self, params, x):
        """Returns hidden states (B, T, dh) and per-step caches for backward."""
        batch, seq, _ = x.shape
        dh = self.hidden_dim
        w, bias = params["cell/kernel"], params["cell/bias"]
        h = np.zeros((batch, dh))
        c = np.zeros((batch, dh))
        hs = np.empty((batch, seq, dh))
        caches = []
        for t in range(seq):
            z = np.concatenate([x[:, t, :], h], axis=1)
            a = z @ w + bias
            ai, af, ag, ao = np.split(a, 4, axis=1)
            gi = 1.0 / (1.0 + np.exp(-ai))
            gf = 1.0 / (1.0 + np.exp(-af))
            gg = np.tanh(ag)
            go = 1.0 / (1.0 + np.exp(-ao))
            c_prev = c
            c = gf * c_prev + gi * gg
            tc = np.tanh(c)
            h = go * tc
            hs[:, t, :] = h
            caches.append((z, gi, gf, gg, go, c_prev, tc))
        return hs, caches

    def batch(self, stream: int, index: int, batch_size: int) -> Batch:
        rng = batch_rng(self.seed, stream, index)
        x = self.input_scale * rng.standard_normal((batch_size, self.seq_len, self.input_dim))
        targets, _ = self._forward(self.teacher, x)
        return Batch(inputs=x, targets=targets, index=index)

    def loss(self, params, batch) -> float:
        hs, _ = self._forward(params, batch.inputs)
        return float(np.mean((hs - batch.targets) ** 2))

    def loss_and_grads(self, params, batch):
        x = batch.inputs
        hs, caches = self._forward(params, x)
        err = hs - batch.targets
        loss = float(np.mean(err * err))
        d_hs = 2.0 * err / err.size

        w = params["cell/kernel"]
        din, dh = self.input_dim, self.hidden_dim
        d_w = np.zeros_like(w)
        d_bias = np.zeros_like(params["cell/bias"])
        d_h_carry = np.zeros((x.shape[0], dh))
        d_c_carry = np.zeros((x.shape[0], dh))
        for t in reversed(range(self.seq_len)):
            z, gi, gf, gg, go, c_prev, tc = caches[t]
            d_h = d_hs[:, t, :] + d_h_carry
            d_c = d_h * go * (1.0 - tc * tc) + d_c_carry
            d_ai = d_c * gg * gi * (1.0 - gi)
            d_af = d_c * c_prev * gf * (1.0 - gf)
            d_ag = d_c * gi * (1.0 - gg * gg)
            d_ao = d_h * tc * go * (1.0 - go)
            d_a = np.concatenate([d_ai, d_af, d_ag, d_ao], axis=1)
            d_w += z.T @ d_a
            d_bias += d_a.sum(axis=0)
            d_z = d_a @ w.T
            d_h_carry = d_z[:, din:]
            d_c_carry = d_c * gf
        return loss, {"cell/kernel": d_w, "cell/bias": d_bias}


def quadratic_model(
    dim: int, target_scale: float, *, noise_scale: float = 0.1, seed: int = 0
) -> QuadraticModel:
    return QuadraticModel(dim, target_scale, noise_scale=noise_scale, seed=seed)


def mlp_model(
    input_dim: int,
    hidden_dim: int,
    output_dim: int,
    *,
    seed: int = 0,
    activation: str = "exact",
    target_noise: float = 0.0,
) -> MlpModel:
    return MlpModel(
        input_dim,
        hidden_dim,
        output_dim,
        seed=seed,
        activation=activation,
        target_noise=target_noise,
    )


def lstm_cell_model(
    input_dim: int,
    hidden_dim: int,
    *,
    seq_len: int = 3,
    input_scale: float = 0.5,
    seed: int = 0,
) -> LstmCellModel:
    return LstmCellModel(
        input_dim, hidden_dim, seq_len=seq_len, input_scale=input_scale, seed=seed
    )
