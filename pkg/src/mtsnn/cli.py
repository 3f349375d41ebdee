"""Command-line front end: train, eval, ablate, verify, plot.

Every subcommand is deterministic given (config, seed).  Exit codes:
0 success, 1 runtime failure (including failed verification), 2 usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import mfree
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, DataConfig, RunConfig, load_config, snapshot
from .data import (DataFormatError, LabeledImages, load_cifar10_dir,
                   resolve_data_root, synth_dataset)
from .model import Model, build
from .train import TrainingDiverged, evaluate, fit


def _load_splits(data_cfg: DataConfig, data_root: str | None) -> tuple[LabeledImages, LabeledImages]:
    if data_cfg.dataset == "cifar10":
        root = resolve_data_root(data_root or data_cfg.root or None)
        if not root:
            raise ConfigError("cifar10 requires --data-root or MTSNN_DATA")
        train, test = load_cifar10_dir(root)
    else:
        train = synth_dataset(data_cfg.synth_train, data_cfg.synth_classes,
                              seed=data_cfg.synth_seed, noise=data_cfg.synth_noise)
        test = synth_dataset(data_cfg.synth_test, data_cfg.synth_classes,
                             seed=data_cfg.synth_seed + 1, noise=data_cfg.synth_noise)
    if data_cfg.train_limit:
        train = train.subset(data_cfg.train_limit)
    if data_cfg.test_limit:
        test = test.subset(data_cfg.test_limit)
    return train, test


def _make_run_dir(out: str | None, config_path: str) -> str:
    if out:
        os.makedirs(out, exist_ok=True)
        return out
    stem = os.path.splitext(os.path.basename(config_path))[0]
    stamp = time.strftime("%Y%m%d-%H%M%S")
    run_dir = os.path.join("runs", f"{stem}-{stamp}")
    os.makedirs(run_dir, exist_ok=True)
    return run_dir


def _train_one(cfg: RunConfig, data_root: str | None, run_dir: str,
               resume: str | None = None, quiet: bool = False):
    train_data, test_data = _load_splits(cfg.data, data_root)
    model = build(cfg.model, seed=cfg.seed)
    with open(os.path.join(run_dir, "config.snapshot.cfg"), "w") as fh:
        fh.write(snapshot(cfg))
    log = None if quiet else (lambda msg: print(msg, flush=True))
    metrics = fit(model, train_data, test_data, cfg.train, seed=cfg.seed,
                  run_dir=run_dir, resume_from=resume,
                  run_id=os.path.basename(run_dir), log=log)
    return model, metrics


def cmd_train(args) -> int:
    overrides = list(args.set)
    if args.steps is not None:
        overrides.append(f"model.steps={args.steps}")
    cfg = load_config(args.config, overrides=overrides, seed=args.seed)
    run_dir = _make_run_dir(args.out, args.config)
    _, metrics = _train_one(cfg, args.data_root, run_dir, resume=args.resume,
                            quiet=args.quiet)
    print(f"run dir: {run_dir}")
    print(f"peak test accuracy: {metrics.peak_test_accuracy:.4f}")
    print(f"final test accuracy: {metrics.final_test_accuracy():.4f}")
    return 0


def _restore_run(run_dir: str) -> tuple[RunConfig, Model]:
    snap = os.path.join(run_dir, "config.snapshot.cfg")
    ckpt = os.path.join(run_dir, "checkpoint.ckpt")
    if not os.path.exists(snap):
        raise ConfigError(f"{run_dir}: missing config.snapshot.cfg")
    cfg = load_config(snap)
    model = build(cfg.model, seed=cfg.seed)
    arrays, _, _ = load_checkpoint(ckpt)
    for name, p in model.parameters():
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"{ckpt}: missing parameter {name}")
        p.data = arrays[key].astype(p.data.dtype)
    model.load_buffers({name: arrays[f"buffer/{name}"] for name, _ in model.buffers()})
    return cfg, model


def cmd_eval(args) -> int:
    cfg, model = _restore_run(args.run)
    _, test_data = _load_splits(cfg.data, args.data_root)
    loss, acc = evaluate(model, test_data, cfg.train.batch_size, cfg.train.loss)
    print(f"test loss {loss:.4f}  test accuracy {acc:.4f}")
    return 0


AXES = ("mt_scope", "deltas", "steps")


def _apply_axis(value: str, axis: str) -> list[str]:
    if axis == "mt_scope":
        return [f"mt.scope={value}"]
    if axis == "deltas":
        return [f"mt.deltas={value}"]
    return [f"model.steps={value}"]


def cmd_ablate(args) -> int:
    values = [v.strip() for v in args.values.split(";") if v.strip()]
    if not values:
        raise ConfigError("ablate: empty grid; pass --values")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for value in values:
        overrides = list(args.set or []) + _apply_axis(value, args.axis)
        cfg = load_config(args.config, overrides=overrides, seed=args.seed)
        sub = os.path.join(args.out, f"{args.axis}-{value.replace(',', '_')}")
        os.makedirs(sub, exist_ok=True)
        _, metrics = _train_one(cfg, args.data_root, sub, quiet=True)
        rows.append((value, metrics.peak_test_accuracy, metrics.final_test_accuracy()))
        print(f"{args.axis}={value}: peak {rows[-1][1]:.4f} final {rows[-1][2]:.4f}")
    csv_path = os.path.join(args.out, "ablation.csv")
    with open(csv_path, "w") as fh:
        fh.write(f"{args.axis},peak_accuracy,final_accuracy\n")
        for value, peak, final in rows:
            fh.write(f"\"{value}\",{peak:.6f},{final:.6f}\n")
    print(f"wrote {csv_path}")
    return 0


def cmd_verify(args) -> int:
    cfg, model = _restore_run(args.run)
    _, test_data = _load_splits(cfg.data, args.data_root)
    n = min(args.samples, len(test_data))
    if args.inject_multiply:
        mfree.set_multiply_injection(True)
    try:
        report = mfree.verify_model(model, test_data.images[:n],
                                    steps=args.steps or cfg.model.steps)
    finally:
        mfree.set_multiply_injection(False)
    out_path = args.out or os.path.join(args.run, "verify.json")
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    status = "PASS" if report["passed"] else "FAIL"
    print(f"{status}: logit diff {report['logit_max_abs_diff']:.2e}, "
          f"accum multiplications {report['accum_multiplications']}, "
          f"argmax agreement {report['argmax_agreement']:.3f}")
    print(f"wrote {out_path}")
    return 0 if report["passed"] else 1


def cmd_plot(args) -> int:
    from .plotting import plot_accuracy_vs_epoch, plot_accuracy_vs_steps

    os.makedirs(args.out, exist_ok=True)
    for run_dir in args.runs:
        if not os.path.exists(os.path.join(run_dir, "metrics.csv")):
            raise ConfigError(f"{run_dir}: missing metrics.csv")
    made = [plot_accuracy_vs_epoch(args.runs, os.path.join(args.out, "accuracy_vs_epoch.png")),
            plot_accuracy_vs_steps(args.runs, os.path.join(args.out, "accuracy_vs_steps.png"))]
    for path in made:
        print(f"wrote {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtsnn",
                                     description="Spiking network training and "
                                                 "multiplication-free inference")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config value")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--data-root", default=None,
                       help="dataset root (or set MTSNN_DATA)")

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", default=None, help="run directory")
    p_train.add_argument("--resume", default=None, help="checkpoint to resume from")
    p_train.add_argument("--steps", type=int, default=None,
                         help="shorthand for --set model.steps=N")
    p_train.add_argument("--quiet", action="store_true")
    common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a finished run")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--data-root", default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="sweep one axis over a shared seed")
    p_ablate.add_argument("--config", required=True)
    p_ablate.add_argument("--axis", required=True, choices=AXES)
    p_ablate.add_argument("--values", required=True,
                          help="semicolon-separated settings, e.g. "
                               "'none;-0.3;0.3;-0.3,0.3' for the deltas axis")
    p_ablate.add_argument("--out", required=True)
    common(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_verify = sub.add_parser("verify", help="check the multiplication-free path")
    p_verify.add_argument("--run", required=True)
    p_verify.add_argument("--samples", type=int, default=16)
    p_verify.add_argument("--steps", type=int, default=None)
    p_verify.add_argument("--out", default=None)
    p_verify.add_argument("--data-root", default=None)
    p_verify.add_argument("--inject-multiply", action="store_true",
                          help=argparse.SUPPRESS)
    p_verify.set_defaults(func=cmd_verify)

    p_plot = sub.add_parser("plot", help="render accuracy charts from run dirs")
    p_plot.add_argument("--runs", nargs="+", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, RuntimeError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
