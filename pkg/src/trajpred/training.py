"""Raster datasets, encoder pretraining and head fine-tuning."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .metrics import MetricReport, PredictionSet, evaluate
from .models import FROZEN_BLOCKS, MTP, CoverNet, Linear, RasterModel, TinyEncoder
from .raster import DEFAULT_RESOLUTION, DEFAULT_SIZE, Palette, rasterize
from .scene import Instance, StateVector
from .trajset import MEAN_POINTWISE, TrajectorySet, closest_elements

logger = logging.getLogger(__name__)

PRETRAIN_TASKS = ("rotation4", "agent_count")
HEADS = ("covernet", "mtp")
_CHUNK = 128


@dataclass
class RasterData:
    images: np.ndarray  # (N, 3, H, W)
    states: np.ndarray  # (N, 3) normalized
    gts: np.ndarray  # (N, 12, 2)
    agent_counts: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "RasterData":
        idx = np.asarray(idx, dtype=np.int64)
        return RasterData(self.images[idx], self.states[idx], self.gts[idx], self.agent_counts[idx])


def prepare(
    instances: Sequence[Instance],
    size: int = DEFAULT_SIZE,
    resolution: float = DEFAULT_RESOLUTION,
    palette: Palette | None = None,
) -> RasterData:
    palette = palette or Palette()
    n = len(instances)
    images = np.empty((n, 3, size, size))
    for i, inst in enumerate(instances):
        images[i] = rasterize(inst.scene, palette, size, resolution).pixels.transpose(2, 0, 1)
    states = np.array([StateVector.from_state(i.target_state).normalized() for i in instances]).reshape(n, 3)
    gts = np.array([i.ground_truth.points for i in instances]).reshape(n, -1, 2)
    counts = np.array([len(i.scene.agents) for i in instances], dtype=np.float64)
    return RasterData(images, states, gts, counts)


def split_of(index: int) -> str:
    """Stable 60/20/20 train/val/test assignment from a hash of the instance index."""
    bucket = int.from_bytes(hashlib.sha256(str(index).encode()).digest()[:8], "little") % 100
    return "train" if bucket < 60 else "val" if bucket < 80 else "test"


def split_indices(n: int) -> dict[str, np.ndarray]:
    parts = {"train": [], "val": [], "test": []}
    for i in range(n):
        parts[split_of(i)].append(i)
    return {k: np.array(v, dtype=np.int64) for k, v in parts.items()}


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def lower_features(encoder: TinyEncoder, images: np.ndarray) -> np.ndarray:
    """Activations entering the first trainable block when the lower blocks are frozen."""
    out = [encoder(images[s : s + _CHUNK], stop=FROZEN_BLOCKS).data for s in range(0, len(images), _CHUNK)]
    return np.concatenate(out)


# --- pretraining ------------------------------------------------------------


@dataclass
class PretrainResult:
    encoder: TinyEncoder
    losses: list[float]
    train_accuracy: float


def rotation_batch(images: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    return np.stack([np.rot90(img, int(k), axes=(1, 2)) for img, k in zip(images, rotations)])


def pretrain_encoder(
    data: RasterData,
    task: str = "rotation4",
    epochs: int = 20,
    seed: int = 0,
    lr: float = 1e-3,
    batch_size: int = 32,
) -> PretrainResult:
    """Train the encoder with a throwaway head on an auxiliary, label-free task.

    ``rotation4`` classifies which multiple of 90 degrees the raster was
    rotated by; ``agent_count`` regresses the number of agents in the scene.
    """
    if task not in PRETRAIN_TASKS:
        raise ValueError(f"unknown pretraining task {task!r}; choose from {PRETRAIN_TASKS}")
    size = data.images.shape[-1]
    encoder = TinyEncoder(seed, size)
    rng = np.random.default_rng([int(seed), 5])
    out_dim = 4 if task == "rotation4" else 1
    head = Linear(rng, encoder.feature_dim, out_dim, "pretrain.head")
    params = encoder.parameters() + head.parameters()
    opt = ad.Adam(params, lr)
    n = len(data)
    rotations = rng.integers(0, 4, n)
    inputs = rotation_batch(data.images, rotations) if task == "rotation4" else data.images
    counts = data.agent_counts / 10.0

    def loss_on(idx):
        out = head(encoder(inputs[idx]))
        if task == "rotation4":
            return ad.softmax_cross_entropy(out, rotations[idx]), out
        return ad.mse_loss(out, counts[idx].reshape(-1, 1)), out

    losses = []
    for _ in range(epochs):
        total = 0.0
        for idx in _batches(n, batch_size, rng):
            loss, _ = loss_on(idx)
            opt.step(ad.backward(loss, params))
            total += loss.item() * len(idx)
        losses.append(total / n)
        logger.info("pretrain %s epoch %d loss %.4f", task, len(losses), losses[-1])

    accuracy = float("nan")
    if task == "rotation4":
        correct = 0
        for idx in _batches(n, _CHUNK, None):
            _, out = loss_on(idx)
            correct += int(np.sum(np.argmax(out.data, axis=1) == rotations[idx]))
        accuracy = correct / n
    return PretrainResult(encoder, losses, accuracy)


# --- fine-tuning ------------------------------------------------------------


def build_model(head: str, size: int, seed: int, hidden: int = 64, num_modes: int | None = None) -> RasterModel:
    encoder = TinyEncoder(seed, size)
    if head == "covernet":
        if num_modes is None:
            raise ValueError("covernet needs the trajectory set size")
        return CoverNet(encoder, num_modes, hidden, seed)
    if head == "mtp":
        return MTP(encoder, hidden, seed)
    raise ValueError(f"unknown head {head!r}; choose from {HEADS}")


def model_from_arrays(head: str, named: dict[str, np.ndarray], size: int) -> RasterModel:
    """Rebuild a trained model from checkpoint arrays, inferring the head widths."""
    hidden = named["head.fc1.w"].shape[1]
    num_modes = named["head.fc2.w"].shape[1] if head == "covernet" else None
    model = build_model(head, size, 0, hidden, num_modes)
    model.load_arrays(named)
    return model


@dataclass
class FinetuneResult:
    model: RasterModel
    losses: list[float]
    report: MetricReport | None
    predictions: list[PredictionSet] | None = None


def predict(model: RasterModel, data: RasterData, tset: TrajectorySet | None = None) -> list[PredictionSet]:
    preds = []
    for idx in _batches(len(data), _CHUNK, None):
        if isinstance(model, CoverNet):
            preds += model.predict(data.images[idx], data.states[idx], tset)
        else:
            preds += model.predict(data.images[idx], data.states[idx])
    return preds


def cosine_lr(base: float, epoch: int, epochs: int) -> float:
    return 0.5 * base * (1.0 + np.cos(np.pi * epoch / epochs))


def finetune(
    encoder_arrays: dict[str, np.ndarray] | None,
    head: str,
    freeze_lower: bool,
    train: RasterData,
    test: RasterData | None,
    epochs: int,
    seed: int,
    lr: float = 1e-3,
    tset: TrajectorySet | None = None,
    hidden: int = 64,
    batch_size: int = 32,
    cosine: bool = True,
) -> FinetuneResult:
    """Train a head (and the unfrozen encoder blocks) on ``train``; evaluate on ``test``.

    ``encoder_arrays`` of ``None`` means a from-scratch encoder seeded by ``seed``.
    The head initialization depends only on ``seed``, never on the encoder source.
    """
    size = train.images.shape[-1]
    if head == "covernet" and tset is None:
        raise ValueError("covernet fine-tuning needs a trajectory set")
    model = build_model(head, size, seed, hidden, len(tset) if tset is not None else None)
    if encoder_arrays is not None:
        model.encoder.load_arrays(encoder_arrays)
    model.encoder.freeze_lower(freeze_lower)
    params = model.parameters()
    opt = ad.Adam(params, lr)
    rng = np.random.default_rng([int(seed), 3])

    start = FROZEN_BLOCKS if freeze_lower else 0
    inputs = lower_features(model.encoder, train.images) if freeze_lower else train.images
    labels = closest_elements(tset, train.gts, MEAN_POINTWISE) if head == "covernet" else None

    losses = []
    n = len(train)
    for epoch in range(epochs):
        if cosine:
            opt.lr = cosine_lr(lr, epoch, epochs)
        total = 0.0
        for idx in _batches(n, batch_size, rng):
            if head == "covernet":
                loss = model.loss(inputs[idx], train.states[idx], None, tset, start, labels[idx])
            else:
                loss = model.loss(inputs[idx], train.states[idx], train.gts[idx], start)
            opt.step(ad.backward(loss, params))
            total += loss.item() * len(idx)
        losses.append(total / n)
        logger.info("finetune %s epoch %d loss %.4f", head, len(losses), losses[-1])

    report, preds = None, None
    if test is not None and len(test):
        preds = predict(model, test, tset)
        report = evaluate(preds, list(test.gts))
    return FinetuneResult(model, losses, report, preds)
