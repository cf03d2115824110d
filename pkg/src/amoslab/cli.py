"""Command-line entry points: run, compare, memreport, tables.

Every command reads run definitions from INI config files (see
``load_config``). Output locations can be overridden with the
AMOSLAB_OUTPUT_DIR environment variable. Exit codes: 0 success, 2 bad
configuration or arguments, 3 divergence during training.
"""

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, DivergenceError
from .eta_rules import bert_base_layer_decls, resolve_etas, t5_layer_decls
from .harness import (
    build_hyperparams,
    build_model,
    build_param_specs,
    compare_runs,
    load_config,
    run_experiment,
    slot_memory_report,
)

OUTPUT_DIR_ENV = "AMOSLAB_OUTPUT_DIR"


def _apply_output_override(config, out_dir_flag=None):
    override = out_dir_flag or os.environ.get(OUTPUT_DIR_ENV)
    if override and config.out_dir:
        return replace(config, out_dir=str(Path(override) / Path(config.out_dir).name))
    if override and not config.out_dir:
        return replace(config, out_dir=override)
    return config


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    config = _apply_output_override(config, args.out_dir)
    result = run_experiment(config, resume=args.resume)
    s = result.summary
    print(f"run finished: {s['steps']} steps, optimizer={s['optimizer']}")
    print(f"  final train loss: {s['final_train_loss']:.6g}")
    print(f"  final eval loss:  {s['final_eval_loss']:.6g}")
    if "xi" in s:
        print(f"  xi: {s['xi']:.4g} (1/sqrt(num_batches) heuristic: {s['xi_heuristic']:.4g})")
    for name, scale in sorted(s["scales"].items()):
        print(
            f"  {name}: m2(theta)={scale['m2_theta']:.4g} eta={scale['eta']:.4g}"
            f" ratio={scale['m2_to_eta']:.3f}"
        )
    if config.out_dir:
        print(f"  metrics and checkpoints under {config.out_dir}")
    return 0


def _cmd_compare(args) -> int:
    paths = [p for p in args.configs.split(",") if p]
    configs = [_apply_output_override(load_config(p), args.out_dir) for p in paths]
    labels = [Path(p).stem for p in paths]
    comparison = compare_runs(configs, threshold=args.threshold, labels=labels)
    csv_text = comparison.as_csv()
    if args.out:
        Path(args.out).write_text(csv_text)
        print(f"wrote comparison table to {args.out}")
    else:
        print(csv_text, end="")
    if args.threshold is not None:
        for label in comparison.labels:
            reached = comparison.steps_to_threshold[label]
            shown = "never" if reached is None else str(reached)
            print(f"steps to eval loss <= {args.threshold:g} [{label}]: {shown}")
    return 0


def _cmd_memreport(args) -> int:
    config = load_config(args.config)
    model = build_model(config)
    hp = build_hyperparams(config)
    momentum = getattr(hp, "mu", None) is not None
    specs = build_param_specs(model, config.reduction)
    report = slot_memory_report(specs, amos_momentum=momentum)
    print(f"model={config.model} reduction={config.reduction} momentum={momentum}")
    print(f"parameter elements: {report.param_elements}")
    print(f"amos slots: v={report.amos['v']} b={report.amos['b']} m={report.amos['m']}"
          f" total={report.amos['total']}")
    print(f"adamw slots: total={report.adamw['total']}")
    print(f"adagrad slots: total={report.adagrad['total']}")
    print(f"sgd slots: total={report.sgd['total']}")
    if report.adamw["total"]:
        print(f"amos/adamw ratio: {report.amos['total'] / report.adamw['total']:.4f}")
    return 0


def _cmd_tables(args) -> int:
    if args.which == "eta-bert":
        decls = bert_base_layer_decls(hidden=args.hidden or 768, mlp_dim=args.mlp_dim or 3072)
        title = f"eta for BERT-style encoders (hidden={args.hidden or 768}, mlp={args.mlp_dim or 3072})"
    else:
        decls = t5_layer_decls(
            hidden=args.hidden or 1024,
            mlp_dim=args.mlp_dim or 4096,
            head_dim=args.head_dim or 64,
        )
        title = (
            f"eta for T5-style models (hidden={args.hidden or 1024},"
            f" mlp={args.mlp_dim or 4096}, head={args.head_dim or 64})"
        )
    print(title)
    for name, eta in resolve_etas(decls).items():
        print(f"  {name:32s} {eta:.10g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amoslab",
        description="Train desk-scale models with the Amos optimizer and baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute one training run from a config file")
    run.add_argument("--config", required=True, help="INI run configuration")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--resume", default=None, help="checkpoint to resume from")
    run.add_argument("--out-dir", default=None, help="override the output directory")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="run several configs and align their losses")
    cmp_.add_argument("--configs", required=True, help="comma-separated config files")
    cmp_.add_argument("--threshold", type=float, default=None, help="eval-loss threshold")
    cmp_.add_argument("--out", default=None, help="write the CSV table here")
    cmp_.add_argument("--out-dir", default=None, help="override run output directories")
    cmp_.set_defaults(func=_cmd_compare)

    mem = sub.add_parser("memreport", help="slot memory accounting for a config")
    mem.add_argument("--config", required=True)
    mem.set_defaults(func=_cmd_memreport)

    tables = sub.add_parser("tables", help="print per-variable eta reference tables")
    tables.add_argument("--which", required=True, choices=("eta-bert", "eta-t5"))
    tables.add_argument("--hidden", type=int, default=None)
    tables.add_argument("--mlp-dim", type=int, default=None)
    tables.add_argument("--head-dim", type=int, default=None)
    tables.set_defaults(func=_cmd_tables)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except DivergenceError as e:
        print(f"diverged: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
