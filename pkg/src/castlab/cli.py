"""Command-line entry point: gen-data | train | eval | ablate | profile.

Every command is deterministic given (config, seed); artifacts embed the
run's config hash. Exit codes: 0 success, 2 configuration or validation
error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from .config import RunConfig
from .data import FormatError, generate, read_dataset, write_dataset
from .model import (VARIANTS, CastConfig, CheckpointError, build_variant,
                    load_checkpoint, save_checkpoint)
from .profiler import count_flops, count_params, tower_flops
from .report import write_ablation_table, write_loss_curve, write_metrics
from .tokens import ConfigError
from .train import evaluate, infer_multiview, train
from .metrics import MetricsReport

__all__ = ["main"]

PAPER_SCALE = dict(depth=12, dim=768, heads=12, patch=16, frames=16,
                   height=224, width=224, appearance_classes=20,
                   motion_classes=20)


def _apply_thread_cap():
    cap = os.environ.get("CAST_THREADS")
    if not cap:
        return
    try:
        limit = int(cap)
    except ValueError:
        raise ConfigError(f"CAST_THREADS must be an integer, got {cap!r}")
    if limit < 1:
        raise ConfigError(f"CAST_THREADS must be >= 1, got {limit}")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(limit)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=limit)
    except ImportError:
        pass


def _load_run(args):
    if getattr(args, "config", None):
        run = RunConfig.from_file(args.config)
    else:
        run = RunConfig()
    if getattr(args, "seed", None) is not None:
        run = RunConfig(
            model=dataclasses.replace(run.model, seed=args.seed),
            train=dataclasses.replace(run.train, seed=args.seed),
            data=dataclasses.replace(run.data, seed=args.seed))
    if getattr(args, "variant", None):
        run = RunConfig(model=dataclasses.replace(run.model, variant=args.variant),
                        train=run.train, data=run.data)
    return run.validate()


def _parse_views(text):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"--views expects TxS (e.g. 2x3), got {text!r}")
    try:
        t, s = int(parts[0]), int(parts[1])
    except ValueError:
        raise ConfigError(f"--views expects integers, got {text!r}")
    if t < 1 or s < 1:
        raise ConfigError(f"view counts must be >= 1, got {text!r}")
    return t, s


def _val_path(out):
    stem, ext = os.path.splitext(out)
    return f"{stem}.val{ext or '.castdata'}"


def _file_hash(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()[:16]


# ----------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    run = _load_run(args)
    train_ds, val_ds = generate(run.data)
    write_dataset(train_ds, args.out)
    val_out = _val_path(args.out)
    write_dataset(val_ds, val_out)
    print(f"gen-data: {len(train_ds)} train -> {args.out} "
          f"(sha256 {_file_hash(args.out)})")
    print(f"gen-data: {len(val_ds)} val -> {val_out} "
          f"(sha256 {_file_hash(val_out)})")
    print(f"config_hash {run.config_hash()}")
    return 0


def cmd_train(args):
    run = _load_run(args)
    train_ds = read_dataset(args.data)
    model = build_variant(run.model)
    curve = train(model, train_ds, run.train,
                  log=(print if args.verbose else None))
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    save_checkpoint(model, ckpt_path)
    report = None
    if args.val:
        val_ds = read_dataset(args.val)
        report = evaluate(model, val_ds, config_hash=run.config_hash(),
                          seed=run.train.seed)
        for row in curve:
            row.setdefault("val_hm", "")
        curve[-1]["val_hm"] = report.harmonic_means.get("tasks", 0.0)
        write_metrics(report, os.path.join(args.out, "metrics.json"))
    csv_path, png_path = write_loss_curve(curve, args.out)
    with open(os.path.join(args.out, "run.json"), "w") as f:
        json.dump({"config_hash": run.config_hash(), "config": run.to_dict(),
                   "checkpoint": ckpt_path}, f, indent=2)
    print(f"train: checkpoint -> {ckpt_path}")
    print(f"train: curve -> {csv_path}, {png_path}")
    if report is not None:
        print(f"train: val harmonic means {report.harmonic_means}")
    print(f"config_hash {run.config_hash()}")
    return 0


def _evaluate_multiview(model, dataset, views, config_hash, seed):
    t_views, s_crops = views
    preds = {}
    batch = 32
    for start in range(0, len(dataset), batch):
        idx = np.arange(start, min(start + batch, len(dataset)))
        probs = infer_multiview(model, dataset.batch(idx), t_views, s_crops)
        for task, p in probs.items():
            preds.setdefault(task, []).append(np.argmax(p, axis=-1))
    preds = {task: np.concatenate(chunks) for task, chunks in preds.items()}
    app, mot = dataset.labels()
    if "action" in preds:
        labels = {"action": app.astype(np.int64) * dataset.motion_classes
                  + mot.astype(np.int64)}
    else:
        labels = {"appearance": app.astype(np.int64),
                  "motion": mot.astype(np.int64)}
    return MetricsReport.from_predictions(preds, labels,
                                          config_hash=config_hash, seed=seed)


def cmd_eval(args):
    run = _load_run(args)
    dataset = read_dataset(args.data)
    model = build_variant(run.model)
    if args.ckpt:
        load_checkpoint(model, args.ckpt)
    views = _parse_views(args.views)
    if views == (1, 1):
        report = evaluate(model, dataset, config_hash=run.config_hash(),
                          seed=run.train.seed)
    else:
        report = _evaluate_multiview(model, dataset, views, run.config_hash(),
                                     run.train.seed)
    out = args.out or "metrics.json"
    write_metrics(report, out, views=f"{views[0]}x{views[1]}")
    print(f"eval: metrics -> {out}")
    print(f"eval: harmonic means {report.harmonic_means}")
    print(f"config_hash {run.config_hash()}")
    return 0


def cmd_ablate(args):
    run = _load_run(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise ConfigError("--variants must name at least one variant")
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; valid: {', '.join(VARIANTS)}")
    train_ds = read_dataset(args.data)
    val_ds = read_dataset(args.val)
    os.makedirs(args.out, exist_ok=True)
    results = []
    for name in variants:
        cfg = dataclasses.replace(run.model, variant=name)
        model = build_variant(cfg)
        train(model, train_ds, run.train)
        report = evaluate(model, val_ds, config_hash=run.config_hash(),
                          seed=run.train.seed)
        accs = report.top1_per_task
        results.append({
            "name": name,
            "learnable_params": count_params(cfg).learnable_total,
            "appearance_top1": accs.get("appearance", accs.get("action", 0.0)),
            "motion_top1": accs.get("motion", accs.get("action", 0.0)),
            "harmonic_mean": report.harmonic_means.get("tasks", 0.0),
            "config_hash": run.config_hash(),
        })
        print(f"ablate: {name} hm={results[-1]['harmonic_mean']:.4f}")
    json_path, txt_path, png_path = write_ablation_table(results, args.out)
    print(f"ablate: table -> {txt_path}, {json_path}, {png_path}")
    return 0


def cmd_profile(args):
    if args.paper_scale:
        overrides = dict(PAPER_SCALE)
        if args.variant:
            overrides["variant"] = args.variant
        model_cfg = CastConfig(**overrides)
        run_hash = model_cfg.config_hash()
    else:
        run = _load_run(args)
        model_cfg = run.model
        run_hash = run.config_hash()
    model_cfg.validate()
    views = _parse_views(args.views)
    n_views = views[0] * views[1]
    if args.tower:
        report = tower_flops(model_cfg, args.tower,
                             flops_per_mac=args.flops_per_mac)
    else:
        report = count_params(model_cfg, flops_per_mac=args.flops_per_mac)
        flop_report = count_flops(model_cfg, views=n_views,
                                  flops_per_mac=args.flops_per_mac)
        by_name = {r.name: r for r in flop_report.rows}
        for row in report.rows:
            if row.name in by_name:
                row.flops = by_name[row.name].flops
        report.assumptions.update(flop_report.assumptions)
    report.assumptions["config_hash"] = run_hash
    text = report.to_text()
    print(text)
    if args.assumptions:
        print(json.dumps(report.assumptions, indent=2, sort_keys=True))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "profile.txt"), "w") as f:
            f.write(text + "\n")
        with open(os.path.join(args.out, "profile.json"), "w") as f:
            f.write(report.to_json())
        print(f"profile: report -> {args.out}/profile.txt, {args.out}/profile.json")
    return 0


# ----------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="castlab",
        description="Two-stream video transformer lab: data, training, "
                    "evaluation, ablations, and cost profiling.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset pair")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--seed", type=int, help="override all section seeds")
    p.add_argument("--out", required=True, help="train split output path")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="fine-tune a model on a dataset file")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--data", required=True, help="training dataset file")
    p.add_argument("--val", help="validation dataset file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", help="checkpoint to load (default: fresh init)")
    p.add_argument("--views", default="1x1", help="TxS multi-view counts")
    p.add_argument("--out", help="metrics JSON path")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare a list of variants")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--variants", required=True,
                   help="comma-separated variant names")
    p.add_argument("--data", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("profile", help="analytic parameter/FLOP report")
    p.add_argument("--config", help="key=value run config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--paper-scale", action="store_true",
                   help="ViT-B/16 preset: depth 12, dim 768, 16 frames, 224x224")
    p.add_argument("--tower", choices=("spatial", "temporal"),
                   help="cost one frozen expert tower alone")
    p.add_argument("--views", default="1x1")
    p.add_argument("--flops-per-mac", type=int, default=1, choices=(1, 2),
                   help="1 counts multiply-adds, 2 counts multiplies and adds")
    p.add_argument("--assumptions", action="store_true",
                   help="echo the assumption toggles as JSON")
    p.add_argument("--out", help="directory for profile.txt / profile.json")
    p.set_defaults(handler=cmd_profile)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap()
        return args.handler(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
