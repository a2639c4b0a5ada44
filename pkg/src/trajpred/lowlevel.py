"""Synthetic stand-in for front-camera feature vectors plus semantic map vectors.

Each sample observes a hidden driving state at t - 0.4 s and t; the targets
are speed and steering angle one second after t.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .metrics import mse
from .models import SeqRegressor, seq_forward

LOOKBACK = 0.4
LOOKAHEAD = 1.0


def generate_drive(count: int, seed: int, camera_dim: int = 16, map_dim: int = 8, noise: float = 0.02) -> dict:
    rng = np.random.default_rng([int(seed), 11])
    speed = rng.uniform(0.0, 30.0, count)
    accel = rng.uniform(-3.0, 3.0, count)
    angle = rng.uniform(-30.0, 30.0, count)
    rate = rng.uniform(-20.0, 20.0, count)
    # fixed random projections play the role of a camera: features are a
    # nonlinear, noisy view of the hidden state
    cam_proj = rng.normal(size=(4, camera_dim))
    map_proj = rng.normal(size=(3, map_dim))

    def observe(s, a, th, r):
        hidden = np.stack([s / 30.0, a / 3.0, th / 30.0, r / 20.0], axis=1)
        cam = np.tanh(hidden @ cam_proj) + noise * rng.normal(size=(count, camera_dim))
        road = np.stack([th / 30.0, np.minimum(s + 5.0, 30.0) / 30.0, rng.uniform(0, 1, count)], axis=1)
        mp = road @ map_proj + noise * rng.normal(size=(count, map_dim))
        return cam, mp

    cam0, map0 = observe(speed - LOOKBACK * accel, accel, angle - LOOKBACK * rate, rate)
    cam1, map1 = observe(speed, accel, angle, rate)
    return {
        "camera_t0": cam0,
        "camera_t1": cam1,
        "map_t0": map0,
        "map_t1": map1,
        "speed": np.clip(speed + LOOKAHEAD * accel, 0.0, None),
        "angle": angle + LOOKAHEAD * rate,
    }


def subset(data: dict, idx) -> dict:
    return {k: v[idx] for k, v in data.items()}


def train_seq(model: SeqRegressor, data: dict, epochs: int, lr: float = 1e-3, seed: int = 0, batch_size: int = 32) -> list[float]:
    """Adam on MSE(speed) + MSE(angle); returns the mean loss per epoch."""
    params = model.parameters()
    opt = ad.Adam(params, lr)
    rng = np.random.default_rng([int(seed), 12])
    n = data["speed"].shape[0]
    history = []
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            batch = subset(data, order[start : start + batch_size])
            loss = model.loss(batch)
            opt.step(ad.backward(loss, params))
            total += loss.item() * len(batch["speed"])
        history.append(total / n)
    return history


def evaluate_seq(model: SeqRegressor, data: dict) -> dict:
    speed, angle = seq_forward(model, data["camera_t0"], data["camera_t1"], data["map_t0"], data["map_t1"])
    return {"speed_mse": mse(speed, data["speed"]), "angle_mse": mse(angle, data["angle"])}
