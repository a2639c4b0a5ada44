"""Desk-scale networks: a four-block CNN encoder, CoverNet and MTP heads, and the two-step sequence regressor."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .metrics import PredictionSet, ades
from .scene import HORIZON
from .trajset import MEAN_POINTWISE, TrajectorySet, closest_elements

N_BLOCKS = 4
FROZEN_BLOCKS = 3  # the lowest three quarters of the encoder
DEFAULT_CHANNELS = (8, 16, 16, 32)
STATE_DIM = 3
MTP_MODES = 3
# MTP regresses coordinates in units of this many metres
COORD_SCALE = 10.0


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


class Module:
    """Anything exposing an ordered ``parameters()`` list of named Parameters."""

    def parameters(self) -> list[Parameter]:
        raise NotImplementedError

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.parameters()}

    def load_arrays(self, named: dict[str, np.ndarray], strict: bool = True) -> None:
        own = {p.name: p for p in self.parameters()}
        if strict and set(named) != set(own):
            missing = sorted(set(own) - set(named))
            extra = sorted(set(named) - set(own))
            raise ad.CheckpointError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, arr in named.items():
            if name not in own:
                continue
            if own[name].shape != arr.shape:
                raise ad.CheckpointError(f"shape mismatch for {name}: checkpoint {arr.shape}, model {own[name].shape}")
            own[name].data = np.array(arr, dtype=np.float64)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, fan_in: int, fan_out: int, name: str, zero: bool = False):
        w = np.zeros((fan_in, fan_out)) if zero else ad.glorot_uniform(rng, (fan_in, fan_out), fan_in, fan_out)
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(fan_out), f"{name}.b")

    def __call__(self, x) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


class ConvBlock(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, name: str, kernel: int = 3):
        k = kernel * kernel
        self.w = Parameter(ad.glorot_uniform(rng, (out_ch, in_ch, kernel, kernel), in_ch * k, out_ch * k), f"{name}.w")
        self.b = Parameter(np.zeros(out_ch), f"{name}.b")

    def __call__(self, x) -> Tensor:
        return ad.maxpool2x2(ad.relu(ad.conv2d(x, self.w, self.b)))

    def parameters(self) -> list[Parameter]:
        return [self.w, self.b]


def encoder_output_shape(size: int, channels: Sequence[int] = DEFAULT_CHANNELS, kernel: int = 3) -> tuple[int, int]:
    """(channels, spatial side) after the last block for a square input of ``size``."""
    side = size
    for _ in channels:
        side = (side - kernel + 1) // 2
        if side < 1:
            raise ValueError(f"raster size {size} is too small for {len(channels)} conv blocks")
    return channels[-1], side


class TinyEncoder(Module):
    """Four conv-relu-pool blocks, block 0 lowest, followed by flatten."""

    def __init__(self, seed: int = 0, size: int = 64, in_channels: int = 3, channels: Sequence[int] = DEFAULT_CHANNELS):
        if len(channels) != N_BLOCKS:
            raise ValueError(f"encoder needs {N_BLOCKS} blocks")
        rng = _rng(seed, 1)
        self.size = size
        self.channels = tuple(channels)
        c, side = encoder_output_shape(size, channels)
        self.feature_dim = c * side * side
        chans = (in_channels,) + self.channels
        self.blocks = [ConvBlock(rng, chans[i], chans[i + 1], f"encoder.block{i}") for i in range(N_BLOCKS)]

    def __call__(self, x, start: int = 0, stop: int = N_BLOCKS) -> Tensor:
        """Run blocks ``start..stop-1``; flattens only when the last block ran."""
        h = ad.as_tensor(x)
        for block in self.blocks[start:stop]:
            h = block(h)
        return ad.flatten(h) if stop == N_BLOCKS else h

    def parameters(self) -> list[Parameter]:
        return [p for b in self.blocks for p in b.parameters()]

    def freeze_lower(self, frozen: bool = True) -> None:
        for block in self.blocks[:FROZEN_BLOCKS]:
            for p in block.parameters():
                p.trainable = not frozen

    @property
    def lower_frozen(self) -> bool:
        return not any(p.trainable for b in self.blocks[:FROZEN_BLOCKS] for p in b.parameters())


class _Fusion(Module):
    def __init__(self, rng, in_dim: int, hidden: int, out_dim: int, zero_final: bool):
        self.fc1 = Linear(rng, in_dim, hidden, "head.fc1")
        self.fc2 = Linear(rng, hidden, out_dim, "head.fc2", zero=zero_final)

    def __call__(self, x) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))

    def parameters(self) -> list[Parameter]:
        return self.fc1.parameters() + self.fc2.parameters()


class RasterModel(Module):
    """Encoder features concatenated with the normalized state vector, then a fusion MLP."""

    kind = "base"

    def __init__(self, encoder: TinyEncoder, out_dim: int, hidden: int, seed: int, zero_final: bool):
        self.encoder = encoder
        self.hidden = hidden
        self.fusion = _Fusion(_rng(seed, 2), encoder.feature_dim + STATE_DIM, hidden, out_dim, zero_final)

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.fusion.parameters()

    def outputs(self, images, states, start_block: int = 0) -> Tensor:
        """Raw head outputs; ``images`` may be activations entering ``start_block``."""
        feats = self.encoder(images, start=start_block)
        return self.fusion(ad.concat([feats, ad.as_tensor(np.asarray(states, dtype=np.float64))], axis=1))


class CoverNet(RasterModel):
    kind = "covernet"

    def __init__(self, encoder: TinyEncoder, num_modes: int, hidden: int = 64, seed: int = 0, zero_final: bool = False):
        super().__init__(encoder, num_modes, hidden, seed, zero_final)
        self.num_modes = num_modes

    def logits(self, images, states, start_block: int = 0) -> Tensor:
        return self.outputs(images, states, start_block)

    def loss(self, images, states, gts, tset: TrajectorySet, start_block: int = 0, labels=None) -> Tensor:
        return covernet_loss(self.logits(images, states, start_block), gts, tset, labels)

    def predict(self, images, states, tset: TrajectorySet, start_block: int = 0) -> list[PredictionSet]:
        logits = self.logits(images, states, start_block).data
        if logits.shape[1] != len(tset):
            raise ValueError(f"head emits {logits.shape[1]} logits but the trajectory set has {len(tset)} elements")
        probs = ad.softmax(logits)
        return [PredictionSet(tset.elements, p) for p in probs]


class MTP(RasterModel):
    kind = "mtp"

    def __init__(self, encoder: TinyEncoder, hidden: int = 64, seed: int = 0, modes: int = MTP_MODES, zero_final: bool = False):
        super().__init__(encoder, modes * HORIZON * 2 + modes, hidden, seed, zero_final)
        self.modes = modes

    def heads(self, images, states, start_block: int = 0) -> tuple[Tensor, Tensor]:
        """(trajectories in metres, flattened (N, M*24); mode logits (N, M))."""
        out = self.outputs(images, states, start_block)
        split = self.modes * HORIZON * 2
        return ad.scale(ad.take(out, (slice(None), slice(0, split))), COORD_SCALE), ad.take(
            out, (slice(None), slice(split, None))
        )

    def loss(self, images, states, gts, start_block: int = 0, alpha: float = 1.0) -> Tensor:
        modes, logits = self.heads(images, states, start_block)
        return mtp_loss(modes, logits, gts, alpha)

    def predict(self, images, states, start_block: int = 0) -> list[PredictionSet]:
        modes, logits = self.heads(images, states, start_block)
        trajs = modes.data.reshape(-1, self.modes, HORIZON, 2)
        probs = ad.softmax(logits.data)
        return [PredictionSet(t, p) for t, p in zip(trajs, probs)]


def covernet_forward(model: CoverNet, raster, state, tset: TrajectorySet) -> PredictionSet:
    """Probabilities over ``tset`` for one raster (H, W, 3) and normalized state (3,)."""
    image = np.asarray(getattr(raster, "pixels", raster)).transpose(2, 0, 1)[None]
    return model.predict(image, np.asarray(state, dtype=np.float64)[None], tset)[0]


def mtp_forward(model: MTP, raster, state) -> PredictionSet:
    image = np.asarray(getattr(raster, "pixels", raster)).transpose(2, 0, 1)[None]
    return model.predict(image, np.asarray(state, dtype=np.float64)[None])[0]


def covernet_loss(logits, gts, tset: TrajectorySet, labels=None) -> Tensor:
    """Cross-entropy against the set element closest (mean point-wise) to each ground truth."""
    logits = ad.as_tensor(logits)
    single = logits.ndim == 1
    if logits.shape[-1] != len(tset):
        raise ValueError(f"{logits.shape[-1]} logits for a set of {len(tset)}")
    if labels is None:
        gts = np.asarray(gts, dtype=np.float64).reshape(-1, HORIZON, 2)
        labels = closest_elements(tset, gts, MEAN_POINTWISE)
    return ad.softmax_cross_entropy(logits, labels[0] if single else labels)


def best_modes(modes: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Index of the mode with the lowest ADE per instance; lower index on ties."""
    return np.array([int(np.argmin(ades(m, g))) for m, g in zip(modes, gts)], dtype=np.int64)


def mtp_loss(modes, logits, gts, alpha: float = 1.0) -> Tensor:
    """Classification loss on the best-matching mode plus ``alpha`` times its coordinate MSE.

    ``modes`` is (N, M*T*2) or (M, T, 2); ``logits`` (N, M) or (M,); ``gts`` (N, T, 2) or (T, 2).
    """
    modes, logits = ad.as_tensor(modes), ad.as_tensor(logits)
    if logits.ndim == 1:
        modes = ad.reshape(modes, (1, -1))
        logits = ad.reshape(logits, (1, -1))
    n, m = logits.shape
    gts = np.asarray(gts, dtype=np.float64).reshape(n, -1, 2)
    per_mode = gts.shape[1] * 2
    if modes.shape != (n, m * per_mode):
        raise ad.ShapeError(f"mtp_loss: modes {modes.shape} do not match {m} modes of {gts.shape[1]} points")
    best = best_modes(modes.data.reshape(n, m, -1, 2), gts)
    mask = np.zeros((n, m, per_mode))
    mask[np.arange(n), best] = 1.0
    target = np.repeat(gts.reshape(n, 1, per_mode), m, axis=1)
    classification = ad.softmax_cross_entropy(logits, best)
    regression = ad.mse_loss(modes, target.reshape(n, -1), mask.reshape(n, -1))
    return ad.add(classification, ad.scale(regression, alpha))


# --- low-level sequence regressor -------------------------------------------

SPEED_SCALE = 30.0
ANGLE_SCALE = 30.0


class LSTMCell(Module):
    def __init__(self, rng, in_dim: int, hidden: int, name: str):
        self.hidden = hidden
        self.gates = {
            g: (Linear(rng, in_dim, hidden, f"{name}.{g}x"), Linear(rng, hidden, hidden, f"{name}.{g}h"))
            for g in ("i", "f", "o", "c")
        }

    def __call__(self, x, h, c) -> tuple[Tensor, Tensor]:
        pre = {g: ad.add(lx(x), lh(h)) for g, (lx, lh) in self.gates.items()}
        i, f, o = ad.sigmoid(pre["i"]), ad.sigmoid(pre["f"]), ad.sigmoid(pre["o"])
        c_new = ad.add(ad.elementwise_mul(f, c), ad.elementwise_mul(i, ad.tanh(pre["c"])))
        return ad.elementwise_mul(o, ad.tanh(c_new)), c_new

    def parameters(self) -> list[Parameter]:
        return [p for pair in self.gates.values() for lin in pair for p in lin.parameters()]


class SeqRegressor(Module):
    """Per-timestep camera and map encoders, fusion, an LSTM over (t - 0.4 s, t), and two regressors."""

    def __init__(self, camera_dim: int = 16, map_dim: int = 8, hidden: int = 32, seed: int = 0, zero_final: bool = True):
        rng = _rng(seed, 4)
        self.camera_dim, self.map_dim, self.hidden = camera_dim, map_dim, hidden
        self.camera_enc = Linear(rng, camera_dim, hidden, "seq.camera")
        self.map_enc = Linear(rng, map_dim, hidden, "seq.map")
        self.fuse = Linear(rng, 2 * hidden, hidden, "seq.fuse")
        self.lstm = LSTMCell(rng, hidden, hidden, "seq.lstm")
        self.speed = (Linear(rng, 2 * hidden, hidden, "seq.speed1"), Linear(rng, hidden, 1, "seq.speed2", zero=zero_final))
        self.angle = (Linear(rng, 2 * hidden, hidden, "seq.angle1"), Linear(rng, hidden, 1, "seq.angle2", zero=zero_final))

    def parameters(self) -> list[Parameter]:
        ps = self.camera_enc.parameters() + self.map_enc.parameters() + self.fuse.parameters()
        ps += self.lstm.parameters()
        for lin in self.speed + self.angle:
            ps += lin.parameters()
        return ps

    def _encode(self, camera, map_vec) -> Tensor:
        camera, map_vec = ad.as_tensor(camera), ad.as_tensor(map_vec)
        if camera.shape[-1] != self.camera_dim or map_vec.shape[-1] != self.map_dim:
            raise ad.ShapeError(
                f"seq_forward: expected widths ({self.camera_dim}, {self.map_dim}), got ({camera.shape[-1]}, {map_vec.shape[-1]})"
            )
        joint = ad.concat([ad.relu(self.camera_enc(camera)), ad.relu(self.map_enc(map_vec))], axis=1)
        return ad.relu(self.fuse(joint))

    def __call__(self, features_t0, features_t1, map_t0, map_t1) -> tuple[Tensor, Tensor]:
        """(speed, steering angle) predictions, each (N, 1), in physical units."""
        e0 = self._encode(features_t0, map_t0)
        e1 = self._encode(features_t1, map_t1)
        zeros = ad.Tensor(np.zeros((e0.shape[0], self.hidden)))
        h, c = self.lstm(e0, zeros, zeros)
        h, c = self.lstm(e1, h, c)
        z = ad.concat([h, e0], axis=1)
        speed = self.speed[1](ad.relu(self.speed[0](z)))
        angle = self.angle[1](ad.relu(self.angle[0](z)))
        return ad.scale(speed, SPEED_SCALE), ad.scale(angle, ANGLE_SCALE)

    def loss(self, batch: dict) -> Tensor:
        speed, angle = self(batch["camera_t0"], batch["camera_t1"], batch["map_t0"], batch["map_t1"])
        return ad.add(
            ad.mse_loss(speed, batch["speed"].reshape(-1, 1)), ad.mse_loss(angle, batch["angle"].reshape(-1, 1))
        )


def seq_forward(model: SeqRegressor, features_t0, features_t1, map_vec_t0, map_vec_t1) -> tuple[np.ndarray, np.ndarray]:
    speed, angle = model(
        np.atleast_2d(features_t0), np.atleast_2d(features_t1), np.atleast_2d(map_vec_t0), np.atleast_2d(map_vec_t1)
    )
    return speed.data[:, 0], angle.data[:, 0]
