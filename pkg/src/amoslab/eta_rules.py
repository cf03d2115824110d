"""Per-variable target scales (eta) from layer wiring.

Two rules cover everything:

* linear kernel W in R^{m x n} mapping inputs of scale x to outputs of scale
  y: eta(W) = y / (x * sqrt(m)),
* bias u added to that output: eta(u) = y / 2, close to the product term but
  never dominating it.

Ranges at layer boundaries come from the surrounding non-linearities. The
defaults used here: activations expect inputs of scale 1 and emit sqrt(1/2)
(half the units end up near zero); softmax over n classes expects inputs of
scale 1 and emits sqrt(1/n); layer normalization emits scale 1 regardless of
its input. Constants with no derivable rule (e.g. relative position
embeddings) are declared via ``override_eta``.
"""

import math
from dataclasses import dataclass

from .errors import ConfigError

__all__ = [
    "RangeSpec",
    "LayerDecl",
    "eta_linear_kernel",
    "eta_linear_bias",
    "resolve_etas",
    "softmax_output_range",
    "bert_base_layer_decls",
    "t5_layer_decls",
    "ACTIVATION_INPUT_RANGE",
    "ACTIVATION_OUTPUT_RANGE",
    "SOFTMAX_INPUT_RANGE",
    "LAYERNORM_OUTPUT_RANGE",
]

ACTIVATION_INPUT_RANGE = 1.0
ACTIVATION_OUTPUT_RANGE = math.sqrt(0.5)
SOFTMAX_INPUT_RANGE = 1.0
LAYERNORM_OUTPUT_RANGE = 1.0

VARIABLE_KINDS = ("linear_kernel", "linear_bias", "embedding", "layernorm_scale", "custom")
BOUNDARY_KINDS = ("activation", "softmax")


def softmax_output_range(n: int) -> float:
    """Probability vectors have L2 norm <= 1, so entries average sqrt(1/n)."""
    if n < 1:
        raise ConfigError("softmax needs at least one class")
    return math.sqrt(1.0 / n)


@dataclass(frozen=True)
class RangeSpec:
    """Expected quadratic mean of a tensor's entries at a layer boundary."""

    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ConfigError(f"range must be positive, got {self.value}")


@dataclass(frozen=True)
class LayerDecl:
    """One declared variable (or range boundary) in the model wiring."""

    name: str
    kind: str
    input_range: RangeSpec | None = None
    output_range: RangeSpec | None = None
    input_dim: int | None = None
    override_eta: float | None = None

    def __post_init__(self):
        if self.kind not in VARIABLE_KINDS + BOUNDARY_KINDS:
            raise ConfigError(f"{self.name}: unknown layer kind {self.kind!r}")
        if self.kind in ("linear_kernel", "embedding", "custom"):
            if self.input_dim is not None and self.input_dim < 1:
                raise ConfigError(f"{self.name}: input_dim must be >= 1")
        if self.override_eta is not None and not self.override_eta > 0:
            raise ConfigError(f"{self.name}: override_eta must be positive")


def eta_linear_kernel(x: float, y: float, m: int) -> float:
    """eta = y / (x * sqrt(m)) so that random inputs of scale x map to scale y."""
    if not (x > 0 and y > 0):
        raise ConfigError("input and output ranges must be positive")
    if m < 1:
        raise ConfigError("input dimension must be >= 1")
    return y / (x * math.sqrt(m))


def eta_linear_bias(y: float) -> float:
    """eta = y / 2: comparable to the kernel output but not dominating it."""
    if not y > 0:
        raise ConfigError("output range must be positive")
    return y / 2.0


def _kernel_eta(decl: LayerDecl) -> float:
    missing = [
        field
        for field, value in (
            ("input_range", decl.input_range),
            ("output_range", decl.output_range),
            ("input_dim", decl.input_dim),
        )
        if value is None
    ]
    if missing:
        raise ConfigError(f"{decl.name}: cannot resolve eta, missing {', '.join(missing)}")
    return eta_linear_kernel(decl.input_range.value, decl.output_range.value, decl.input_dim)


def resolve_etas(decls: list[LayerDecl]) -> dict[str, float]:
    """Per-variable eta map; ``override_eta`` always wins.

    Boundary declarations (activation, softmax) carry no trainable variable
    and produce no entry. A ``custom`` variable without an override or a full
    (input_range, output_range, input_dim) triple is a configuration error.
    """
    etas: dict[str, float] = {}
    for decl in decls:
        if decl.kind in BOUNDARY_KINDS:
            continue
        if decl.name in etas:
            raise ConfigError(f"duplicate variable declaration: {decl.name}")
        if decl.override_eta is not None:
            etas[decl.name] = decl.override_eta
        elif decl.kind in ("linear_kernel", "embedding", "custom"):
            etas[decl.name] = _kernel_eta(decl)
        elif decl.kind == "linear_bias":
            if decl.output_range is None:
                raise ConfigError(f"{decl.name}: bias needs an output range")
            etas[decl.name] = eta_linear_bias(decl.output_range.value)
        elif decl.kind == "layernorm_scale":
            out = decl.output_range.value if decl.output_range else LAYERNORM_OUTPUT_RANGE
            etas[decl.name] = out
    return etas


def bert_base_layer_decls(hidden: int = 768, mlp_dim: int = 3072) -> list[LayerDecl]:
    """Variable declarations for a BERT-style encoder.

    All linear transformations in this architecture have output range 1: they
    either feed the MLP activation (input range 1) or are summed into a
    residual stream normalized to 1. Token embeddings double as the logit
    kernel, whose inputs come from layer normalization (range 1) and whose
    outputs feed a softmax (input range 1). Relative position embeddings have
    no derivable rule and are pinned at 0.5, just below the hidden state's
    scale.
    """
    one = RangeSpec(1.0)
    return [
        LayerDecl("linear/bias", "linear_bias", output_range=one),
        LayerDecl("layernorm/scale", "layernorm_scale"),
        LayerDecl(
            "embeddings/input",
            "embedding",
            input_range=RangeSpec(LAYERNORM_OUTPUT_RANGE),
            output_range=RangeSpec(SOFTMAX_INPUT_RANGE),
            input_dim=hidden,
        ),
        LayerDecl(
            "mlp/dense2/kernel",
            "linear_kernel",
            input_range=RangeSpec(ACTIVATION_OUTPUT_RANGE),
            output_range=one,
            input_dim=mlp_dim,
        ),
        LayerDecl(
            "linear/other_kernel",
            "linear_kernel",
            input_range=RangeSpec(LAYERNORM_OUTPUT_RANGE),
            output_range=one,
            input_dim=hidden,
        ),
        LayerDecl("embeddings/relative_position", "embedding", override_eta=0.5),
    ]


def t5_layer_decls(hidden: int = 1024, mlp_dim: int = 4096, head_dim: int = 64) -> list[LayerDecl]:
    """Variable declarations for a T5-style encoder-decoder.

    Differences from the BERT set: no bias terms; attention scores are not
    rescaled, so the query kernel carries an extra sqrt(1/head_dim) in its
    output range; token embeddings are not reused for logits and keep their
    initialization scale 1; the additive relative attention bias sits at 0.5,
    just below the attention score's scale.
    """
    one = RangeSpec(1.0)
    return [
        LayerDecl("layernorm/scale", "layernorm_scale"),
        LayerDecl(
            "attention/query_kernel",
            "linear_kernel",
            input_range=RangeSpec(LAYERNORM_OUTPUT_RANGE),
            output_range=RangeSpec(math.sqrt(1.0 / head_dim)),
            input_dim=hidden,
        ),
        LayerDecl("embeddings/input", "embedding", override_eta=1.0),
        LayerDecl(
            "mlp/wo/kernel",
            "linear_kernel",
            input_range=RangeSpec(ACTIVATION_OUTPUT_RANGE),
            output_range=one,
            input_dim=mlp_dim,
        ),
        LayerDecl(
            "linear/other_kernel",
            "linear_kernel",
            input_range=RangeSpec(LAYERNORM_OUTPUT_RANGE),
            output_range=one,
            input_dim=hidden,
        ),
        LayerDecl("attention/relative_bias", "linear_bias", output_range=one),
    ]
