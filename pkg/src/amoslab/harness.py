"""Experiment runner: wires models, scales, optimizers, metrics, checkpoints.

A run is fully determined by its config and seed: batches are addressed by
step index through a counter-based generator, so repeated runs produce
bit-identical parameter trajectories and metrics, and a run resumed from any
checkpoint rejoins the uninterrupted trajectory exactly.
"""

import configparser
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .amos import (
    AmosHyperParams,
    AmosSlots,
    amos_step,
    compute_gamma,
    decay_factors,
    warmup_scale,
)
from .baselines import (
    AdaGradHyperParams,
    AdamWHyperParams,
    SGDHyperParams,
    adagrad_step,
    adamw_step,
    sgd_step,
)
from .errors import ConfigError, DivergenceError, NonFiniteError
from .models import (
    EVAL_STREAM,
    TRAIN_STREAM,
    lstm_cell_model,
    mlp_model,
    quadratic_model,
)
from .optim_core import (
    OptimizerState,
    ParamSpec,
    apply_update,
    init_state,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import AxisMask, m2

__all__ = [
    "REDUCTION_MODES",
    "RunConfig",
    "MetricRecord",
    "VariableMetrics",
    "RatioTracker",
    "update_ratio",
    "RunResult",
    "Comparison",
    "default_xi",
    "mask_for_mode",
    "build_param_specs",
    "build_model",
    "build_hyperparams",
    "run_experiment",
    "compare_runs",
    "slot_memory_report",
    "load_config",
]

REDUCTION_MODES = ("no_reduce", "reduce_1axis", "reduce_dense")


def mask_for_mode(shape: tuple[int, ...], role: tuple[str, int | None], mode: str) -> AxisMask:
    """Slot reduction mask for one variable under a memory-reduction mode.

    reduce_1axis collapses the input axis of kernels and the embed axis of
    embeddings, and every axis of other variables; reduce_dense additionally
    collapses both kernel axes; no_reduce collapses nothing.
    """
    if mode not in REDUCTION_MODES:
        raise ConfigError(f"unknown reduction mode {mode!r}")
    rank = len(shape)
    if mode == "no_reduce":
        return AxisMask.none(rank)
    kind, axis = role
    if kind == "kernel":
        if mode == "reduce_dense":
            return AxisMask.all_axes(rank)
        return AxisMask.for_axes(rank, (axis,))
    if kind == "embedding":
        return AxisMask.for_axes(rank, (axis,))
    return AxisMask.all_axes(rank)


def build_param_specs(model, mode: str, chi: float | None = None) -> list[ParamSpec]:
    etas = model.etas()
    return [
        ParamSpec(
            name=name,
            shape=shape,
            eta=etas[name],
            reduction=mask_for_mode(shape, role, mode),
            clip_threshold=chi,
        )
        for name, shape, role in model.param_layout()
    ]


def default_xi(num_batches: int) -> float:
    """1/sqrt(N) rounded to one significant digit; N counts independent batches."""
    if num_batches < 1:
        raise ConfigError("num_batches must be >= 1")
    raw = 1.0 / math.sqrt(num_batches)
    exponent = math.floor(math.log10(raw))
    return round(raw, -exponent)


@dataclass(frozen=True)
class RunConfig:
    model: str
    model_args: dict
    optimizer: str
    optimizer_args: dict = field(default_factory=dict)
    reduction: str = "reduce_1axis"
    steps: int = 1000
    batch_size: int = 8
    num_batches: int = 1024
    seed: int = 0
    warmup_steps: int | None = None  # None -> 5% of steps
    metrics_every: int = 50
    checkpoint_every: int | None = None  # None -> final checkpoint only
    eval_batches: int = 8
    out_dir: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.metrics_every < 1:
            raise ConfigError("metrics cadence must be >= 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigError("checkpoint cadence must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.reduction not in REDUCTION_MODES:
            raise ConfigError(f"unknown reduction mode {self.reduction!r}")
        if self.eval_batches < 1:
            raise ConfigError("eval_batches must be >= 1")

    def resolved_warmup(self) -> int:
        if self.warmup_steps is not None:
            return self.warmup_steps
        return int(round(0.05 * self.steps))


_MODEL_BUILDERS = {
    "quadratic": quadratic_model,
    "mlp": mlp_model,
    "lstm": lstm_cell_model,
}


def build_model(config: RunConfig):
    if config.model not in _MODEL_BUILDERS:
        raise ConfigError(f"unknown model {config.model!r}")
    try:
        return _MODEL_BUILDERS[config.model](**config.model_args, seed=config.seed)
    except TypeError as e:
        raise ConfigError(f"bad model arguments for {config.model}: {e}") from e


def build_hyperparams(config: RunConfig):
    """Hyper-parameter object for the configured optimizer, defaults applied."""
    args = dict(config.optimizer_args)
    kind = config.optimizer
    try:
        if kind == "amos":
            args.setdefault("xi", default_xi(config.num_batches))
            args.setdefault("warmup_steps", config.resolved_warmup())
            return AmosHyperParams(**args)
        if kind == "adamw":
            args.setdefault("warmup_steps", config.resolved_warmup())
            if args.get("schedule", "linear") == "linear":
                args.setdefault("max_steps", config.steps)
            return AdamWHyperParams(**args)
        if kind == "sgd":
            return SGDHyperParams(**args)
        if kind == "adagrad":
            return AdaGradHyperParams(**args)
    except TypeError as e:
        raise ConfigError(f"bad optimizer arguments for {kind}: {e}") from e
    raise ConfigError(f"unknown optimizer {kind!r}")


# -- Assumption-ratio tracking -------------------------------------------------


@dataclass(frozen=True)
class RatioTracker:
    """Running estimate of M2(E[g]) / sqrt(E[M2(g)^2]) for one variable.

    Both running averages use the same exponential rate and bias correction,
    so the tracked ratio is a convex-combination estimate and never exceeds 1.
    The ratio is None until a nonzero gradient has been seen.
    """

    rate: float = 0.98
    count: int = 0
    avg_g: np.ndarray | None = None
    avg_sq: float = 0.0

    def update(self, g: np.ndarray) -> "RatioTracker":
        r = self.rate
        avg_g = np.zeros_like(g) if self.avg_g is None else self.avg_g
        if avg_g.shape != g.shape:
            raise ConfigError("tracker shape does not match gradient")
        return RatioTracker(
            rate=r,
            count=self.count + 1,
            avg_g=r * avg_g + (1.0 - r) * g,
            avg_sq=r * self.avg_sq + (1.0 - r) * m2(g) ** 2,
        )

    @property
    def ratio(self) -> float | None:
        if self.count == 0:
            return None
        bias = 1.0 - self.rate**self.count
        denom_sq = self.avg_sq / bias
        if denom_sq <= 0.0:
            return None
        return m2(self.avg_g / bias) / math.sqrt(denom_sq)


def update_ratio(tracker: RatioTracker, g: np.ndarray) -> RatioTracker:
    return tracker.update(g)


# -- metric records -------------------------------------------------------------


@dataclass(frozen=True)
class VariableMetrics:
    m2_theta: float
    m2_grad: float | None  # None on the final record, where no step was taken
    mean_c: float | None
    mean_d: float | None
    mean_gamma: float | None
    ratio: float | None


@dataclass(frozen=True)
class MetricRecord:
    step: int
    train_loss: float
    eval_loss: float
    wall_clock: float
    variables: dict[str, VariableMetrics]

    def to_json_dict(self) -> dict:
        return {
            "step": self.step,
            "train_loss": self.train_loss,
            "eval_loss": self.eval_loss,
            "wall_clock": self.wall_clock,
            "variables": {
                name: {
                    "m2_theta": v.m2_theta,
                    "m2_grad": v.m2_grad,
                    "mean_c": v.mean_c,
                    "mean_d": v.mean_d,
                    "mean_gamma": v.mean_gamma,
                    "ratio": v.ratio,
                }
                for name, v in self.variables.items()
            },
        }


_VAR_COLUMNS = ("m2_theta", "m2_grad", "mean_c", "mean_d", "mean_gamma", "ratio")


def _csv_header(var_names: list[str]) -> str:
    cols = ["step", "train_loss", "eval_loss"]
    for name in var_names:
        cols.extend(f"{name}/{c}" for c in _VAR_COLUMNS)
    return ",".join(cols)


def _csv_row(record: MetricRecord, var_names: list[str]) -> str:
    cells = [str(record.step), repr(record.train_loss), repr(record.eval_loss)]
    for name in var_names:
        v = record.variables[name]
        for col in _VAR_COLUMNS:
            value = getattr(v, col)
            cells.append("" if value is None else repr(value))
    return ",".join(cells)


@dataclass
class RunResult:
    config: RunConfig
    records: list[MetricRecord]
    summary: dict
    params: dict[str, np.ndarray]
    state: OptimizerState
    checkpoint_paths: list[str]


# -- the training loop ----------------------------------------------------------


def _step_all_params(specs, hp, params, grads, state, trackers):
    """Apply one optimizer update to every parameter; returns new params/state."""
    new_params = {}
    new_slots = {}
    t = state.step
    for spec in specs:
        name = spec.name
        theta, g = params[name], grads[name]
        try:
            if hp.kind == "amos":
                delta, slots = amos_step(theta, g, AmosSlots.from_dict(state.slots[name]), spec, hp, t)
                new_slots[name] = slots.to_dict()
            elif hp.kind == "adamw":
                delta, new_slots[name] = adamw_step(theta, g, state.slots[name], hp, t)
            elif hp.kind == "adagrad":
                delta, new_slots[name] = adagrad_step(theta, g, state.slots[name], hp)
            else:
                delta = sgd_step(theta, g, hp, t)
                new_slots[name] = {}
            new_params[name] = apply_update(theta, delta)
        except DivergenceError as e:
            e.param = e.param or name
            e.step = t
            raise
        except NonFiniteError as e:
            raise DivergenceError(str(e), param=name, step=t) from e
        trackers[name] = trackers[name].update(g)
    return new_params, OptimizerState(step=t + 1, slots=new_slots)


def _eval_loss(model, params, config: RunConfig) -> float:
    losses = [
        model.loss(params, model.batch(EVAL_STREAM, i, config.batch_size))
        for i in range(config.eval_batches)
    ]
    return float(np.mean(losses))


def _amos_stats(spec, hp, pre_b, post_v, grads, t):
    """c_t, d_t, gamma_t means for the step just taken, recomputed from slots."""
    c, d = decay_factors(pre_b, hp.xi, spec.eta, hp.c_const, hp.d_const)
    v_hat = post_v / (1.0 - hp.beta ** (t + 1))
    g = grads[spec.name]
    chi = spec.clip_threshold if spec.clip_threshold is not None else hp.chi
    if chi is not None:
        g = g * (chi / np.maximum(chi, np.abs(g)))
    xi_t = warmup_scale(t, hp.warmup_steps, hp.xi)
    gamma = compute_gamma(g, v_hat, c, xi_t, spec.reduction, hp.epsilon_guard)
    return float(np.mean(c)), float(np.mean(d)), float(np.mean(gamma))


def run_experiment(config: RunConfig, resume: str | None = None) -> RunResult:
    """Deterministic training loop; emits metric records and checkpoints.

    With ``resume`` pointing at a checkpoint from the same config, the run
    continues from the stored step and reproduces the uninterrupted
    trajectory bit for bit.
    """
    model = build_model(config)
    hp = build_hyperparams(config)
    chi = config.optimizer_args.get("chi") if config.optimizer == "amos" else None
    specs = build_param_specs(model, config.reduction, chi=chi)
    spec_by_name = {s.name: s for s in specs}

    if resume is not None:
        state, params = load_checkpoint(resume)
        if set(params) != {s.name for s in specs} or any(
            params[s.name].shape != s.shape for s in specs
        ):
            raise ConfigError("checkpoint parameters do not match the configured model")
    else:
        params = model.init_params()
        state = init_state(specs, hp)

    out_dir = Path(config.out_dir) if config.out_dir else None
    jsonl_path = csv_path = None
    var_names = sorted(spec_by_name)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "checkpoints").mkdir(exist_ok=True)
        jsonl_path = out_dir / "metrics.jsonl"
        csv_path = out_dir / "metrics.csv"
        if resume is None:
            jsonl_path.write_text("")
            csv_path.write_text(_csv_header(var_names) + "\n")

    trackers = {name: RatioTracker() for name in var_names}
    records: list[MetricRecord] = []
    checkpoint_paths: list[str] = []
    start = time.perf_counter()

    def emit(record: MetricRecord):
        records.append(record)
        if jsonl_path is not None:
            with open(jsonl_path, "a") as f:
                f.write(json.dumps(record.to_json_dict(), sort_keys=True) + "\n")
            with open(csv_path, "a") as f:
                f.write(_csv_row(record, var_names) + "\n")

    def checkpoint(tag: int) -> str | None:
        if out_dir is None:
            return None
        path = out_dir / "checkpoints" / f"step_{tag:06d}.ckpt"
        save_checkpoint(state, params, path, hyper_snapshot=_hyper_snapshot(config, hp))
        checkpoint_paths.append(str(path))
        return str(path)

    train_loss = math.nan
    try:
        while state.step < config.steps:
            t = state.step
            try:
                batch = model.batch(TRAIN_STREAM, t % config.num_batches, config.batch_size)
                train_loss, grads = model.loss_and_grads(params, batch)
                if not math.isfinite(train_loss):
                    raise DivergenceError("non-finite training loss", step=t)

                pre_b = (
                    {name: state.slots[name]["b"] for name in var_names}
                    if hp.kind == "amos"
                    else None
                )
                params, state = _step_all_params(specs, hp, params, grads, state, trackers)

                if t % config.metrics_every == 0:
                    variables = {}
                    for name in var_names:
                        spec = spec_by_name[name]
                        mean_c = mean_d = mean_gamma = None
                        if hp.kind == "amos":
                            mean_c, mean_d, mean_gamma = _amos_stats(
                                spec, hp, pre_b[name], state.slots[name]["v"], grads, t
                            )
                        variables[name] = VariableMetrics(
                            m2_theta=m2(params[name]),
                            m2_grad=m2(grads[name]),
                            mean_c=mean_c,
                            mean_d=mean_d,
                            mean_gamma=mean_gamma,
                            ratio=trackers[name].ratio,
                        )
                    emit(
                        MetricRecord(
                            step=t,
                            train_loss=train_loss,
                            eval_loss=_eval_loss(model, params, config),
                            wall_clock=time.perf_counter() - start,
                            variables=variables,
                        )
                    )

                if config.checkpoint_every is not None and state.step % config.checkpoint_every == 0:
                    checkpoint(state.step)
            except DivergenceError:
                raise
            except NonFiniteError as e:
                raise DivergenceError(str(e), step=t) from e
    except DivergenceError as e:
        if out_dir is not None:
            (out_dir / "summary.json").write_text(
                json.dumps(
                    {"diverged": True, "step": e.step, "param": e.param}, sort_keys=True
                )
            )
        raise

    final_eval = _eval_loss(model, params, config)
    if not records or records[-1].step != state.step:
        variables = {
            name: VariableMetrics(
                m2_theta=m2(params[name]),
                m2_grad=None,
                mean_c=None,
                mean_d=None,
                mean_gamma=None,
                ratio=trackers[name].ratio,
            )
            for name in var_names
        }
        emit(
            MetricRecord(
                step=state.step,
                train_loss=train_loss,
                eval_loss=final_eval,
                wall_clock=time.perf_counter() - start,
                variables=variables,
            )
        )

    final_path = checkpoint(state.step)
    summary = {
        "diverged": False,
        "steps": state.step,
        "final_train_loss": train_loss,
        "final_eval_loss": final_eval,
        "num_batches": config.num_batches,
        "optimizer": config.optimizer,
        "scales": {
            name: {
                "m2_theta": m2(params[name]),
                "eta": spec_by_name[name].eta,
                "m2_to_eta": m2(params[name]) / spec_by_name[name].eta,
            }
            for name in var_names
        },
    }
    if hp.kind == "amos":
        summary["xi"] = hp.xi
        summary["xi_heuristic"] = default_xi(config.num_batches)
    if out_dir is not None:
        (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    return RunResult(
        config=config,
        records=records,
        summary=summary,
        params=params,
        state=state,
        checkpoint_paths=checkpoint_paths,
    )


def _hyper_snapshot(config: RunConfig, hp) -> dict:
    snap = {"optimizer": config.optimizer, "seed": config.seed, "steps": config.steps}
    for name in getattr(hp, "__dataclass_fields__", {}):
        snap[name] = getattr(hp, name)
    return snap


# -- run comparison ---------------------------------------------------------------


@dataclass
class Comparison:
    """Aligned eval-loss table for runs sharing a model and data seed."""

    labels: list[str]
    steps: list[int]
    losses: dict[str, list[float]]
    steps_to_threshold: dict[str, int | None]
    threshold: float | None

    def as_csv(self) -> str:
        lines = [",".join(["step"] + self.labels)]
        for i, s in enumerate(self.steps):
            lines.append(",".join([str(s)] + [repr(self.losses[c][i]) for c in self.labels]))
        return "\n".join(lines) + "\n"


def _data_identity(config: RunConfig) -> tuple:
    return (
        config.model,
        tuple(sorted(config.model_args.items())),
        config.seed,
        config.batch_size,
        config.num_batches,
    )


def compare_runs(
    configs: list[RunConfig],
    threshold: float | None = None,
    labels: list[str] | None = None,
    results: list[RunResult] | None = None,
) -> Comparison:
    """Run each config (or reuse given results) and align losses by step."""
    if len(configs) < 2:
        raise ConfigError("compare_runs needs at least two configs")
    identities = {_data_identity(c) for c in configs}
    if len(identities) != 1:
        raise ConfigError("configs must share model, model arguments, and data seed")
    if labels is None:
        labels = []
        for i, c in enumerate(configs):
            label = c.optimizer
            if label in labels:
                label = f"{label}_{i}"
            labels.append(label)
    if results is None:
        results = [run_experiment(c) for c in configs]

    step_sets = [set(r.step for r in res.records) for res in results]
    common = sorted(set.intersection(*step_sets))
    losses = {}
    reached = {}
    for label, res in zip(labels, results):
        by_step = {r.step: r.eval_loss for r in res.records}
        losses[label] = [by_step[s] for s in common]
        reached[label] = None
        if threshold is not None:
            for s in common:
                if by_step[s] <= threshold:
                    reached[label] = s
                    break
    return Comparison(
        labels=labels,
        steps=common,
        losses=losses,
        steps_to_threshold=reached,
        threshold=threshold,
    )


# -- slot memory accounting --------------------------------------------------------


@dataclass(frozen=True)
class MemoryReport:
    param_elements: int
    amos: dict[str, int]
    adamw: dict[str, int]
    adagrad: dict[str, int]
    sgd: dict[str, int]

    def totals(self) -> dict[str, int]:
        return {
            "amos": self.amos["total"],
            "adamw": self.adamw["total"],
            "adagrad": self.adagrad["total"],
            "sgd": self.sgd["total"],
        }


def slot_memory_report(specs: list[ParamSpec], amos_momentum: bool = True) -> MemoryReport:
    """Exact slot-element counts per optimizer; pure integer arithmetic."""
    full = sum(int(np.prod(s.shape)) for s in specs)
    reduced = sum(int(np.prod(s.reduced_shape)) for s in specs)
    amos = {"v": reduced, "b": reduced, "m": full if amos_momentum else 0}
    amos["total"] = sum(amos.values())
    adamw = {"m": full, "v": full, "total": 2 * full}
    adagrad = {"accum": full, "total": full}
    sgd = {"total": 0}
    return MemoryReport(
        param_elements=full, amos=amos, adamw=adamw, adagrad=adagrad, sgd=sgd
    )


# -- config files -------------------------------------------------------------------


def _coerce(value: str):
    text = value.strip()
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_config(path: str | Path) -> RunConfig:
    """Read one run from a flat INI file with [model], [optimizer], [run] sections."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    for section in ("model", "optimizer", "run"):
        if section not in parser:
            raise ConfigError(f"config is missing the [{section}] section")

    model_items = {k: _coerce(v) for k, v in parser["model"].items()}
    model_kind = model_items.pop("kind", None)
    if model_kind is None:
        raise ConfigError("[model] needs a 'kind' entry")
    model_args = {k: v for k, v in model_items.items() if v is not None}

    opt_items = {k: _coerce(v) for k, v in parser["optimizer"].items()}
    opt_kind = opt_items.pop("kind", None)
    if opt_kind is None:
        raise ConfigError("[optimizer] needs a 'kind' entry")
    reduction = opt_items.pop("reduction", None) or "reduce_1axis"
    opt_args = {k: v for k, v in opt_items.items() if v is not None}

    run_items = {k: _coerce(v) for k, v in parser["run"].items()}
    run_args = {k: v for k, v in run_items.items() if v is not None}

    try:
        return RunConfig(
            model=model_kind,
            model_args=model_args,
            optimizer=opt_kind,
            optimizer_args=opt_args,
            reduction=reduction,
            **run_args,
        )
    except TypeError as e:
        raise ConfigError(f"bad [run] entry: {e}") from e


def with_seed(config: RunConfig, seed: int) -> RunConfig:
    return replace(config, seed=seed)
