"""Fixed candidate trajectory set built by greedy epsilon-cover."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

MAX_POINTWISE = "max_pointwise"
MEAN_POINTWISE = "mean_pointwise"
METRICS = (MAX_POINTWISE, MEAN_POINTWISE)

# rows of the pairwise distance matrix computed per block, bounds peak memory
_BLOCK = 256


def _as_array(traj) -> np.ndarray:
    return np.asarray(traj, dtype=np.float64).reshape(-1, 2)


def max_pointwise_distance(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise ValueError(f"trajectory lengths differ: {a.shape[0]} vs {b.shape[0]}")
    return float(np.max(np.linalg.norm(a - b, axis=-1)))


def pairwise_distances(x: np.ndarray, y: np.ndarray, metric: str = MAX_POINTWISE) -> np.ndarray:
    """Distances between every trajectory in ``x`` (n, T, 2) and ``y`` (m, T, 2)."""
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    reduce = np.max if metric == MAX_POINTWISE else np.mean
    out = np.empty((x.shape[0], y.shape[0]))
    for start in range(0, x.shape[0], _BLOCK):
        block = x[start : start + _BLOCK]
        d = np.linalg.norm(block[:, None] - y[None], axis=-1)
        out[start : start + _BLOCK] = reduce(d, axis=-1)
    return out


def fingerprint(trajectories: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(trajectories, dtype="<f8").tobytes()).hexdigest()


@dataclass(frozen=True)
class TrajectorySet:
    elements: np.ndarray  # (K, T, 2)
    epsilon: float
    source_hash: str

    def __post_init__(self):
        arr = np.array(self.elements, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[-1] != 2 or arr.shape[0] == 0:
            raise ValueError(f"trajectory set must be a nonempty (K, T, 2) array, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "elements", arr)

    def __len__(self) -> int:
        return self.elements.shape[0]

    def to_json(self) -> dict:
        return {"epsilon": self.epsilon, "source_hash": self.source_hash, "elements": self.elements.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "TrajectorySet":
        return cls(np.asarray(data["elements"], dtype=np.float64), float(data["epsilon"]), str(data["source_hash"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")))

    @classmethod
    def load(cls, path) -> "TrajectorySet":
        return cls.from_json(json.loads(Path(path).read_text()))


def build_cover(trajectories: Sequence, epsilon: float) -> TrajectorySet:
    """Greedy epsilon-cover of ``trajectories`` under max point-wise distance.

    Each round picks the input that covers the most still-uncovered inputs,
    lowest index on ties, until everything is covered.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = np.stack([_as_array(t) for t in trajectories]) if len(trajectories) else np.empty((0, 0, 2))
    if x.shape[0] == 0:
        raise ValueError("cannot build a trajectory set from no trajectories")
    covers = pairwise_distances(x, x) <= epsilon  # covers[i, j]: i covers j
    uncovered = np.ones(x.shape[0], dtype=bool)
    chosen = []
    while uncovered.any():
        gain = covers[:, uncovered].sum(axis=1)
        best = int(np.argmax(gain))  # argmax returns the first maximum
        chosen.append(best)
        uncovered &= ~covers[best]
    return TrajectorySet(x[chosen], float(epsilon), fingerprint(x))


def verify_cover(tset: TrajectorySet, trajectories: Sequence) -> bool:
    """Brute-force check that every trajectory lies within epsilon of some element."""
    for t in trajectories:
        t = _as_array(t)
        if not any(max_pointwise_distance(t, e) <= tset.epsilon for e in tset.elements):
            return False
    return True


def closest_element(tset: TrajectorySet, gt, metric: str = MEAN_POINTWISE) -> int:
    """Index of the set element nearest ``gt``; lowest index on ties."""
    return int(closest_elements(tset, _as_array(gt)[None], metric)[0])


def closest_elements(tset: TrajectorySet, gts: np.ndarray, metric: str = MEAN_POINTWISE) -> np.ndarray:
    gts = np.asarray(gts, dtype=np.float64)
    if gts.shape[1:] != tset.elements.shape[1:]:
        raise ValueError(f"ground truth shape {gts.shape[1:]} does not match set {tset.elements.shape[1:]}")
    return np.argmin(pairwise_distances(gts, tset.elements, metric), axis=1)
