"""Multi-modal trajectory forecasting metrics: minADE_k, FDE, HitRate_{k,d} and MSE."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PROB_TOLERANCE = 1e-6
CURVE_K_MAX = 25


def _points(traj) -> np.ndarray:
    return np.asarray(traj, dtype=np.float64)


def _displacements(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    if pred.shape[-2:] != gt.shape[-2:]:
        raise ValueError(f"trajectory shapes differ: {pred.shape[-2:]} vs {gt.shape[-2:]}")
    dx = pred[..., 0] - gt[..., 0]
    dy = pred[..., 1] - gt[..., 1]
    return np.sqrt(dx * dx + dy * dy)


def _sequential_mean(d: np.ndarray) -> np.ndarray:
    # left-to-right summation over time, so per-trajectory values are bit-identical to a scalar loop
    acc = d[..., 0].copy()
    for i in range(1, d.shape[-1]):
        acc = acc + d[..., i]
    return acc / d.shape[-1]


@dataclass(frozen=True)
class PredictionSet:
    trajectories: np.ndarray  # (M, T, 2)
    probabilities: np.ndarray  # (M,)

    def __post_init__(self):
        trajs = np.array(self.trajectories, dtype=np.float64)
        probs = np.array(self.probabilities, dtype=np.float64).reshape(-1)
        if trajs.ndim != 3 or trajs.shape[-1] != 2:
            raise ValueError(f"trajectories must be (M, T, 2), got {trajs.shape}")
        if trajs.shape[0] != probs.shape[0]:
            raise ValueError(f"{trajs.shape[0]} trajectories but {probs.shape[0]} probabilities")
        if trajs.shape[0] == 0:
            raise ValueError("empty prediction set")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOLERANCE:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "trajectories", trajs)
        object.__setattr__(self, "probabilities", probs)

    def __len__(self) -> int:
        return self.probabilities.shape[0]

    def ranking(self) -> np.ndarray:
        """Mode indices by decreasing probability, lower index first on ties."""
        return np.argsort(-self.probabilities, kind="stable")

    @classmethod
    def single(cls, traj) -> "PredictionSet":
        return cls(_points(traj)[None], np.ones(1))


def ade(pred, gt) -> float:
    return float(_sequential_mean(_displacements(_points(pred), _points(gt))))


def ades(trajectories: np.ndarray, gt) -> np.ndarray:
    """ADE of each of ``trajectories`` (M, T, 2) against ``gt``."""
    return _sequential_mean(_displacements(_points(trajectories), _points(gt)[None]))


def max_distances(trajectories: np.ndarray, gt) -> np.ndarray:
    return np.max(_displacements(_points(trajectories), _points(gt)[None]), axis=-1)


def min_ade_k(preds: PredictionSet, gt, k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    top = preds.ranking()[:k]
    return float(np.min(ades(preds.trajectories[top], gt)))


def fde(preds: PredictionSet, gt) -> float:
    best = int(np.argmax(preds.probabilities))
    d = preds.trajectories[best, -1] - _points(gt)[-1]
    return float(np.sqrt(d[0] * d[0] + d[1] * d[1]))


def ranked_max_distances(preds: PredictionSet, gt, k_max: int | None = None) -> np.ndarray:
    """Max point-wise distance of each mode, in probability order, truncated to ``k_max``."""
    order = preds.ranking()[:k_max]
    return max_distances(preds.trajectories[order], gt)


def hit_rate(preds_per_instance: Sequence[PredictionSet], gts: Sequence, k: int, d: float) -> float:
    """Fraction of instances where some top-``k`` mode stays within ``d`` metres at every point."""
    if len(preds_per_instance) == 0:
        raise ValueError("hit rate needs at least one instance")
    if len(preds_per_instance) != len(gts):
        raise ValueError("predictions and ground truths are not aligned")
    if k < 1 or d <= 0:
        raise ValueError("need k >= 1 and d > 0")
    hits = [np.min(ranked_max_distances(p, g, k)) <= d for p, g in zip(preds_per_instance, gts)]
    return float(np.mean(hits))


def mse(pred, gt) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"series lengths differ: {pred.shape[0]} vs {gt.shape[0]}")
    if pred.size == 0:
        raise ValueError("mse of empty series")
    diff = pred - gt
    return float(np.mean(diff * diff))


def hitrate_curve_from_ranked(ranked: Sequence[np.ndarray], d: float, k_max: int) -> list[tuple[int, float]]:
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    if len(ranked) == 0:
        return [(k, 0.0) for k in range(1, k_max + 1)]
    curve = []
    for k in range(1, k_max + 1):
        hits = [np.min(np.asarray(r)[:k]) <= d for r in ranked]
        curve.append((k, float(np.mean(hits))))
    return curve


def hitrate_curve(evaluations: Sequence[tuple[PredictionSet, object]], d: float, k_max: int) -> list[tuple[int, float]]:
    """HitRate at every k in 1..k_max for (prediction set, ground truth) pairs."""
    ranked = [ranked_max_distances(p, g, k_max) for p, g in evaluations]
    return hitrate_curve_from_ranked(ranked, d, k_max)


REPORT_COLUMNS = ("minade1", "minade5", "minade10", "fde", "hitrate_5_2m")


@dataclass
class MetricReport:
    minade1: float
    minade5: float
    minade10: float
    fde: float
    hitrate_5_2m: float
    per_instance: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {c: getattr(self, c) for c in REPORT_COLUMNS}

    def to_json(self) -> dict:
        out = self.row()
        out["per_instance"] = self.per_instance
        return out

    @classmethod
    def from_json(cls, data: dict) -> "MetricReport":
        return cls(**{c: float(data[c]) for c in REPORT_COLUMNS}, per_instance=data.get("per_instance", {}))


def evaluate(preds: Sequence[PredictionSet], gts: Sequence, k_max: int = CURVE_K_MAX) -> MetricReport:
    """Full metric suite over aligned predictions and ground truths."""
    if len(preds) == 0 or len(preds) != len(gts):
        raise ValueError("need a nonempty, aligned list of predictions and ground truths")
    per = {"minade1": [], "minade5": [], "minade10": [], "fde": [], "hit_5_2m": [], "ranked_max_dist": []}
    for p, g in zip(preds, gts):
        per["minade1"].append(min_ade_k(p, g, 1))
        per["minade5"].append(min_ade_k(p, g, 5))
        per["minade10"].append(min_ade_k(p, g, 10))
        per["fde"].append(fde(p, g))
        ranked = ranked_max_distances(p, g, k_max)
        per["hit_5_2m"].append(float(np.min(ranked[:5]) <= 2.0))
        per["ranked_max_dist"].append(ranked.tolist())
    return MetricReport(
        minade1=float(np.mean(per["minade1"])),
        minade5=float(np.mean(per["minade5"])),
        minade10=float(np.mean(per["minade10"])),
        fde=float(np.mean(per["fde"])),
        hitrate_5_2m=float(np.mean(per["hit_5_2m"])),
        per_instance=per,
    )
