"""Closed-form planar kinematics shared by the synthetic generator and the physics baselines."""

from __future__ import annotations

import numpy as np

STRAIGHT_LIMIT = 1e-9
SERIES_LIMIT = 1e-2


def effective_time(t: np.ndarray, speed: float, accel: float) -> np.ndarray:
    """Clip time so speed ``speed + accel * t`` never crosses zero.

    Forward in time a decelerating agent stops and stays put; backward in
    time an accelerating agent is at rest before it started moving.
    """
    t = np.asarray(t, dtype=np.float64)
    if accel < 0.0:
        return np.minimum(t, speed / -accel)
    if accel > 0.0:
        return np.maximum(t, -speed / accel)
    return t


def integrate(speed: float, accel: float, yaw_rate: float, t) -> tuple[np.ndarray, ...]:
    """Exact position of an agent starting at the origin facing +x.

    Returns ``(x, y, heading, speed)`` arrays evaluated at times ``t`` (seconds,
    may be negative). Speed is floored at zero; once stopped, the agent stays.
    """
    te = effective_time(t, speed, accel)
    v = speed + accel * te
    heading = yaw_rate * te
    if abs(yaw_rate) < STRAIGHT_LIMIT:
        x = speed * te + 0.5 * accel * te * te
        y = np.zeros_like(te)
        return x, y, heading, v
    w = yaw_rate
    s = np.sin(w * te)
    c = np.cos(w * te)
    h = np.sin(0.5 * w * te)
    # 1 - cos = 2 sin^2(theta/2) keeps the small-w limit stable; sin - theta cos
    # cancels catastrophically for small theta, so use its Taylor series there
    theta = w * te
    sin_minus = np.where(
        np.abs(theta) < SERIES_LIMIT,
        theta**3 / 3.0 - theta**5 / 30.0 + theta**7 / 840.0,
        s - theta * c,
    )
    x = (speed + accel * te) * s / w - 2.0 * accel * h * h / (w * w)
    y = 2.0 * speed * h * h / w + accel * sin_minus / (w * w)
    return x, y, heading, v
