"""Amos optimizer, baselines, per-variable scale rules, and a run harness."""

from .amos import (
    AmosHyperParams,
    AmosSlots,
    amos_step,
    bias_correct,
    clip_gradient,
    compute_gamma,
    decay_factors,
    update_v,
    warmup_scale,
)
from .baselines import (
    AdaGradHyperParams,
    AdamWHyperParams,
    SGDHyperParams,
    adagrad_step,
    adamw_alpha,
    adamw_step,
    sgd_alpha,
    sgd_step,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DivergenceError,
    NonFiniteError,
    ShapeError,
)
from .eta_rules import (
    LayerDecl,
    RangeSpec,
    bert_base_layer_decls,
    eta_linear_bias,
    eta_linear_kernel,
    resolve_etas,
    t5_layer_decls,
)
from .harness import (
    Comparison,
    MetricRecord,
    RatioTracker,
    RunConfig,
    RunResult,
    compare_runs,
    default_xi,
    load_config,
    run_experiment,
    slot_memory_report,
    update_ratio,
)
from .models import (
    Batch,
    batch_rng,
    lstm_cell_model,
    mlp_model,
    quadratic_model,
)
from .optim_core import (
    OptimizerState,
    ParamSpec,
    apply_update,
    checkpoint_metadata,
    init_state,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import AxisMask, broadcast_binary, m2, m2_over_axes

__version__ = "0.1.0"
