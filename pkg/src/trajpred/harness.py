"""Ablation orchestration: pretrained-vs-scratch arms under identical data and head settings."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .baselines import constant_velocity_baseline, physics_oracle
from .metrics import REPORT_COLUMNS, MetricReport, PredictionSet, evaluate
from .scene import Instance, SyntheticConfig, generate_synthetic, load_scenes
from .training import HEADS, PRETRAIN_TASKS, RasterData, finetune, prepare, pretrain_encoder, split_indices
from .trajset import TrajectorySet, build_cover

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("arm", "seed") + REPORT_COLUMNS

ARM_DEFAULTS = {
    "head": "covernet",
    "pretrained": False,
    "freeze": True,
    "epochs": 20,
    "lr": 1e-3,
    "hidden": 64,
    "batch_size": 32,
}
# the only knob allowed to differ between arms that share a head
ENCODER_INIT_KEY = "pretrained"


class ConfigError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"synthetic": {}, "seed": 0})
    trajset: dict = field(default_factory=lambda: {"epsilon": 2.0})
    raster: dict = field(default_factory=lambda: {"size": 64, "resolution": 0.5})
    pretrain: dict = field(default_factory=lambda: {"task": "rotation4", "epochs": 20, "count": 500, "lr": 1e-3})
    arms: list = field(
        default_factory=lambda: [{"id": "scratch", "pretrained": False}, {"id": "pretrained", "pretrained": True}]
    )
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    metrics: list = field(default_factory=lambda: list(REPORT_COLUMNS))
    output_dir: str = "runs"

    def __post_init__(self):
        self.arms = [{**ARM_DEFAULTS, **arm} for arm in self.arms]
        ids = [arm.get("id") for arm in self.arms]
        if any(not isinstance(i, str) or not i for i in ids) or len(set(ids)) != len(ids):
            raise ConfigError(f"arm ids must be unique nonempty strings, got {ids}")
        for arm in self.arms:
            if arm["head"] not in HEADS:
                raise ConfigError(f"arm {arm['id']!r}: unknown head {arm['head']!r}")
        unknown = set(self.metrics) - set(REPORT_COLUMNS)
        if unknown:
            raise ConfigError(f"unknown metrics {sorted(unknown)}")
        if self.pretrain.get("task", "rotation4") not in PRETRAIN_TASKS:
            raise ConfigError(f"unknown pretraining task {self.pretrain.get('task')!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        check_arms(self.arms)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {"dataset", "trajset", "raster", "pretrain", "arms", "seeds", "metrics", "output_dir"}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "trajset": self.trajset,
            "raster": self.raster,
            "pretrain": self.pretrain,
            "arms": self.arms,
            "seeds": self.seeds,
            "metrics": self.metrics,
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        """Stable across machines: hash of the canonical JSON, output location excluded."""
        body = self.to_dict()
        body.pop("output_dir")
        return hashlib.sha256(canonical_json(body).encode()).hexdigest()


def check_arms(arms: Sequence[dict]) -> None:
    """Arms sharing a head may differ only in encoder initialization."""
    for i, a in enumerate(arms):
        for b in arms[i + 1 :]:
            if a["head"] != b["head"]:
                continue
            for key in sorted(set(a) | set(b)):
                if key in ("id", ENCODER_INIT_KEY):
                    continue
                if a.get(key) != b.get(key):
                    raise ConfigError(
                        f"arms {a['id']!r} and {b['id']!r} differ in {key!r} "
                        f"({a.get(key)!r} vs {b.get(key)!r}); only {ENCODER_INIT_KEY!r} may differ"
                    )


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    arm: str
    head: str
    report: MetricReport
    wall_time: float

    def to_json(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "arm": self.arm,
            "head": self.head,
            "report": self.report.to_json(),
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_json(cls, data: dict) -> "RunRecord":
        return cls(
            data["config_hash"], int(data["seed"]), data["arm"], data.get("head", ""),
            MetricReport.from_json(data["report"]), float(data.get("wall_time", 0.0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")))


def load_records(runs_dir) -> list[RunRecord]:
    paths = sorted(Path(runs_dir).glob("*.json"))
    return [RunRecord.from_json(json.loads(p.read_text())) for p in paths]


# --- dataset plumbing -------------------------------------------------------


def load_dataset(spec: dict) -> list[Instance]:
    if "path" in spec:
        instances, _ = load_scenes(spec["path"])
        return instances
    return generate_synthetic(SyntheticConfig.from_dict(spec.get("synthetic", {})), int(spec.get("seed", 0)))


def resolve_trajset(spec: dict, train_gts: np.ndarray) -> TrajectorySet:
    if "path" in spec:
        return TrajectorySet.load(spec["path"])
    return build_cover(list(train_gts), float(spec.get("epsilon", 2.0)))


@dataclass
class PreparedData:
    train: RasterData
    test: RasterData
    tset: TrajectorySet


def prepare_experiment(config: ExperimentConfig, instances: Sequence[Instance] | None = None) -> PreparedData:
    instances = list(instances) if instances is not None else load_dataset(config.dataset)
    data = prepare(instances, int(config.raster.get("size", 64)), float(config.raster.get("resolution", 0.5)))
    splits = split_indices(len(instances))
    train, test = data.subset(splits["train"]), data.subset(splits["test"])
    return PreparedData(train, test, resolve_trajset(config.trajset, train.gts))


def run_ablation(config: ExperimentConfig, prepared: PreparedData | None = None) -> list[RunRecord]:
    """Train and evaluate every (seed, arm) pair; persist checkpoints and records under ``output_dir``.

    Every arm sees the same split, trajectory set and head settings; only the
    encoder initialization (pretrained checkpoint or seeded scratch) differs.
    """
    check_arms(config.arms)
    prepared = prepared or prepare_experiment(config)
    out = Path(config.output_dir)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    tset = prepared.tset
    tset.save(out / "trajset.json")
    chash = config.config_hash()
    records = []
    for seed in config.seeds:
        encoder_arrays = None
        if any(arm["pretrained"] for arm in config.arms):
            count = int(config.pretrain.get("count", 500))
            result = pretrain_encoder(
                prepared.train.subset(np.arange(min(count, len(prepared.train)))),
                config.pretrain.get("task", "rotation4"),
                int(config.pretrain.get("epochs", 20)),
                seed,
                float(config.pretrain.get("lr", 1e-3)),
            )
            encoder_arrays = result.encoder.named_arrays()
            ad.save_checkpoint(encoder_arrays, out / "checkpoints" / f"pretrain_seed{seed}.ckpt")
            logger.info("seed %d: pretraining accuracy %.3f", seed, result.train_accuracy)
        for arm in config.arms:
            start = time.perf_counter()
            result = finetune(
                encoder_arrays if arm["pretrained"] else None,
                arm["head"],
                bool(arm["freeze"]),
                prepared.train,
                prepared.test,
                int(arm["epochs"]),
                seed,
                float(arm["lr"]),
                tset if arm["head"] == "covernet" else None,
                int(arm["hidden"]),
                int(arm["batch_size"]),
            )
            ad.save_checkpoint(result.model.named_arrays(), out / "checkpoints" / f"{arm['id']}_seed{seed}.ckpt")
            record = RunRecord(chash, seed, arm["id"], arm["head"], result.report, time.perf_counter() - start)
            record.save(out / "runs" / f"{arm['id']}_seed{seed}.json")
            records.append(record)
            logger.info("seed %d arm %s: minADE5 %.3f", seed, arm["id"], result.report.minade5)
    return records


# --- reports ----------------------------------------------------------------


def _fmt(value) -> str:
    return repr(float(value)) if isinstance(value, (float, np.floating)) else str(value)


def report_rows(records: Iterable[RunRecord]) -> list[dict]:
    """One row per (arm, seed), then a median row per arm."""
    records = sorted(records, key=lambda r: (r.arm, r.seed))
    rows = [{"arm": r.arm, "seed": r.seed, **r.report.row()} for r in records]
    out = []
    for arm in sorted({r["arm"] for r in rows}):
        mine = [r for r in rows if r["arm"] == arm]
        out += mine
        out.append(
            {"arm": arm, "seed": "median", **{c: statistics.median(r[c] for r in mine) for c in REPORT_COLUMNS}}
        )
    return out


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_report(records: Iterable[RunRecord], path) -> list[dict]:
    rows = report_rows(records)
    Path(path).write_text(rows_to_csv(rows))
    return rows


def arm_medians(records: Iterable[RunRecord], column: str = "minade5") -> dict[str, float]:
    by_arm: dict[str, list[float]] = {}
    for r in records:
        by_arm.setdefault(r.arm, []).append(getattr(r.report, column))
    return {arm: statistics.median(v) for arm, v in sorted(by_arm.items())}


def baseline_reports(instances: Sequence[Instance]) -> dict[str, MetricReport]:
    gts = [i.ground_truth for i in instances]
    return {
        "constant_velocity": evaluate([PredictionSet.single(constant_velocity_baseline(i)) for i in instances], gts),
        "physics_oracle": evaluate([PredictionSet.single(physics_oracle(i)) for i in instances], gts),
    }


def baseline_rows(instances: Sequence[Instance]) -> list[dict]:
    return [{"arm": name, "seed": "", **rep.row()} for name, rep in baseline_reports(instances).items()]
