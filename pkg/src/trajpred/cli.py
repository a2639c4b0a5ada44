"""Command-line entry point: ``trajpred <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from . import autodiff as ad
from .harness import (
    ExperimentConfig,
    RunRecord,
    baseline_rows,
    canonical_json,
    load_records,
    rows_to_csv,
    run_ablation,
    write_report,
)
from .metrics import CURVE_K_MAX, evaluate
from .plots import plot_hitrate_curve, plot_overlay
from .raster import DEFAULT_RESOLUTION, DEFAULT_SIZE, raster_to_png, rasterize
from .scene import SyntheticConfig, generate_synthetic, load_scenes, save_scenes
from .training import (
    HEADS,
    PRETRAIN_TASKS,
    finetune,
    model_from_arrays,
    predict,
    prepare,
    pretrain_encoder,
    split_indices,
)
from .trajset import TrajectorySet, build_cover

logger = logging.getLogger("trajpred")


class CliError(Exception):
    """Reported on stderr with exit status 1."""


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"no such file: {p}")
    return p


def _load_instances(path):
    instances, warnings = load_scenes(_require_file(path))
    if warnings:
        print(f"warning: {warnings} kinematic values clamped while loading {path}", file=sys.stderr)
    return instances


def _split(instances, name: str):
    if name == "all":
        return list(instances)
    return [instances[i] for i in split_indices(len(instances))[name]]


def _parent(path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _args_hash(args: argparse.Namespace) -> str:
    body = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "record", "verbose")}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


# --- subcommands ------------------------------------------------------------


def cmd_gen(args) -> None:
    config = SyntheticConfig()
    if args.config:
        config = SyntheticConfig.from_dict(json.loads(_require_file(args.config).read_text()))
    if args.count is not None:
        config = dataclasses.replace(config, count=args.count)
    save_scenes(generate_synthetic(config, args.seed), _parent(args.out))


def cmd_rasterize(args) -> None:
    instances = _load_instances(args.data)
    indices = range(len(instances)) if args.index is None else [args.index]
    out = Path(args.out)
    for i in indices:
        if not 0 <= i < len(instances):
            raise CliError(f"index {i} out of range for {len(instances)} instances")
        raster = rasterize(instances[i].scene, size=args.size, resolution=args.resolution)
        target = out if args.index is not None else out / f"{i:05d}.png"
        raster_to_png(raster, _parent(target))


def cmd_trajset(args) -> None:
    instances = _split(_load_instances(args.data), args.split)
    tset = build_cover([inst.ground_truth for inst in instances], args.epsilon)
    tset.save(_parent(args.out))
    print(f"{len(tset)} trajectories cover {len(instances)} ground truths at epsilon {args.epsilon} m")


def cmd_pretrain(args) -> None:
    instances = _split(_load_instances(args.data), "train")[: args.count]
    data = prepare(instances, args.size, args.resolution)
    result = pretrain_encoder(data, args.task, args.epochs, args.seed, args.lr, args.batch_size)
    ad.save_checkpoint(result.encoder.named_arrays(), _parent(args.out))
    if args.task == "rotation4":
        print(f"rotation accuracy on the pretraining set: {result.train_accuracy:.4f}")


def _load_trajset(args):
    if args.head != "covernet":
        return None
    if not args.trajset:
        raise CliError("--trajset is required for the covernet head")
    return TrajectorySet.load(_require_file(args.trajset))


def cmd_train(args) -> None:
    instances = _load_instances(args.data)
    tset = _load_trajset(args)
    encoder = None
    if args.encoder:
        named = ad.load_checkpoint(_require_file(args.encoder))
        encoder = {k: v for k, v in named.items() if k.startswith("encoder.")}
    train = prepare(_split(instances, "train"), args.size, args.resolution)
    result = finetune(
        encoder, args.head, args.freeze, train, None, args.epochs, args.seed, args.lr, tset, args.hidden, args.batch_size
    )
    ad.save_checkpoint(result.model.named_arrays(), _parent(args.out))
    print(f"final training loss {result.losses[-1]:.6f}" if result.losses else "no epochs run")


def cmd_eval(args) -> None:
    instances = _load_instances(args.data)
    tset = _load_trajset(args)
    model = model_from_arrays(args.head, ad.load_checkpoint(_require_file(args.model)), args.size)
    data = prepare(_split(instances, args.split), args.size, args.resolution)
    start = time.perf_counter()
    report = evaluate(predict(model, data, tset), list(data.gts))
    record = RunRecord(_args_hash(args), args.seed, args.arm, args.head, report, time.perf_counter() - start)
    record.save(_parent(args.out))
    print(rows_to_csv([{"arm": args.arm, "seed": args.seed, **report.row()}]), end="")


def cmd_baseline(args) -> None:
    instances = _split(_load_instances(args.data), args.split)
    _parent(args.out).write_text(rows_to_csv(baseline_rows(instances)))


def cmd_report(args) -> None:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise CliError(f"no such directory: {runs}")
    records = load_records(runs)
    if not records:
        raise CliError(f"no run records in {runs}")
    write_report(records, _parent(args.out))


def _parse_model_spec(spec: str) -> tuple[str, str, str]:
    parts = spec.split(":", 2)
    if len(parts) != 3 or parts[1] not in HEADS:
        raise CliError(f"--model expects ARM:HEAD:CHECKPOINT with HEAD in {HEADS}, got {spec!r}")
    return parts[0], parts[1], parts[2]


def cmd_plot_overlay(args) -> None:
    instances = _load_instances(args.data)
    if not 0 <= args.index < len(instances):
        raise CliError(f"index {args.index} out of range for {len(instances)} instances")
    inst = instances[args.index]
    tset = TrajectorySet.load(_require_file(args.trajset)) if args.trajset else None
    data = prepare([inst], args.size, args.resolution)
    predictions = {}
    for spec in args.model:
        arm, head, path = _parse_model_spec(spec)
        if head == "covernet" and tset is None:
            raise CliError("--trajset is required to plot a covernet arm")
        model = model_from_arrays(head, ad.load_checkpoint(_require_file(path)), args.size)
        predictions[arm] = predict(model, data, tset)[0]
    plot_overlay(inst.ground_truth, predictions, _parent(args.out), tset.elements if tset is not None else None)


def cmd_plot_hitrate(args) -> None:
    runs = Path(args.runs)
    if not runs.is_dir():
        raise CliError(f"no such directory: {runs}")
    plot_hitrate_curve(load_records(runs), _parent(args.out), args.d, args.k_max)


def cmd_ablate(args) -> None:
    config = ExperimentConfig.load(_require_file(args.config))
    if args.out:
        config.output_dir = args.out
    records = run_ablation(config)
    out = Path(config.output_dir)
    rows = write_report(records, out / "report.csv")
    plot_hitrate_curve(records, out / "hitrate.svg")
    for row in rows:
        if row["seed"] == "median":
            print(f"{row['arm']}: median minADE5 {row['minade5']:.4f}")


# --- parser -----------------------------------------------------------------


def _raster_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--size", type=int, default=DEFAULT_SIZE, help="raster side in pixels")
    p.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION, help="metres per pixel")


def _head_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--head", choices=HEADS, default="covernet")
    p.add_argument("--trajset", help="trajectory set JSON (covernet only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajpred", description="Trajectory prediction experiment toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset")
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="JSON file with generator settings")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("rasterize", help="render scenes to PNG")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, help="render one instance to --out; otherwise all into directory --out")
    p.add_argument("--out", required=True)
    _raster_flags(p)
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("trajset", help="build an epsilon-cover trajectory set from ground truths")
    p.add_argument("--data", required=True)
    p.add_argument("--epsilon", type=float, default=2.0)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_trajset)

    p = sub.add_parser("pretrain", help="pretrain the encoder on an auxiliary task")
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=PRETRAIN_TASKS, default="rotation4")
    p.add_argument("--count", type=int, default=500, help="number of training rasters used")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _raster_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="fine-tune a prediction head on the training split")
    p.add_argument("--data", required=True)
    _head_flags(p)
    p.add_argument("--encoder", help="pretrained encoder checkpoint; omit to train from scratch")
    p.add_argument("--freeze", action=argparse.BooleanOptionalAction, default=True, help="freeze the lower encoder blocks")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _raster_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model and write a run record")
    p.add_argument("--data", required=True)
    _head_flags(p)
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--arm", default="model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="run record JSON")
    _raster_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="score the constant-velocity and physics-oracle baselines")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="aggregate run records into a CSV table")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("plot", help="emit SVG plots")
    plots = p.add_subparsers(dest="plot", required=True)
    q = plots.add_parser("overlay", help="ground truth and top predictions for one instance")
    q.add_argument("--data", required=True)
    q.add_argument("--index", type=int, default=0)
    q.add_argument("--trajset")
    q.add_argument("--model", action="append", default=[], metavar="ARM:HEAD:CHECKPOINT")
    q.add_argument("--out", required=True)
    _raster_flags(q)
    q.set_defaults(func=cmd_plot_overlay)
    q = plots.add_parser("hitrate", help="HitRate versus k per arm")
    q.add_argument("--runs", required=True)
    q.add_argument("--d", type=float, default=2.0, help="distance threshold in metres")
    q.add_argument("--k-max", type=int, default=CURVE_K_MAX)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_plot_hitrate)

    p = sub.add_parser("ablate", help="run a full pretrained-vs-scratch ablation from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override the config's output directory")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CliError, OSError, ValueError, KeyError) as exc:
        print(f"trajpred {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
