"""Deterministic SVG emitters for prediction overlays and HitRate-vs-k curves."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .metrics import CURVE_K_MAX, PredictionSet, hitrate_curve_from_ranked

GT_COLOUR = "#1f77b4"
SET_COLOUR = "#c8c8c8"
ARM_COLOURS = ("#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22")

WIDTH = HEIGHT = 400
MARGIN = 40


def _num(v: float) -> str:
    return f"{v:.3f}"


def _polyline(points: np.ndarray, colour: str, width: float = 2.0, extra: str = "") -> str:
    coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
    return f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="{width}"{extra}/>'


def _legend(entries: Sequence[tuple[str, str]], x0: float, y0: float) -> list[str]:
    out = []
    for i, (label, colour) in enumerate(entries):
        y = y0 + 16 * i
        out.append(f'<rect x="{_num(x0)}" y="{_num(y - 9)}" width="12" height="4" fill="{colour}"/>')
        out.append(f'<text x="{_num(x0 + 18)}" y="{_num(y - 3)}" font-size="11" font-family="sans-serif">{escape(label)}</text>')
    return out


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    return "\n".join([head, f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>', *body, "</svg>\n"])


def _write(path, text: str) -> None:
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write plot to {path}: {exc}") from exc


class OverlayFrame:
    """Maps agent-frame metres (x ahead, y left) to SVG pixels with x drawn upward."""

    def __init__(self, trajectories: Sequence[np.ndarray]):
        pts = np.concatenate([np.asarray(t).reshape(-1, 2) for t in trajectories] + [np.zeros((1, 2))])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1.0))
        self.scale = (WIDTH - 2 * MARGIN) / span
        self.centre = (lo + hi) / 2.0

    def __call__(self, traj) -> np.ndarray:
        p = np.asarray(traj, dtype=np.float64).reshape(-1, 2)
        u = WIDTH / 2 - (p[:, 1] - self.centre[1]) * self.scale
        v = HEIGHT / 2 - (p[:, 0] - self.centre[0]) * self.scale
        return np.stack([u, v], axis=-1)


def overlay_svg(gt, predictions: Mapping[str, PredictionSet], background: np.ndarray | None = None) -> str:
    """Trajectory set in grey, ground truth, and the most likely mode of each arm."""
    arms = list(predictions.items())
    tops = {name: ps.trajectories[ps.ranking()[0]] for name, ps in arms}
    frame = OverlayFrame([np.asarray(gt)] + list(tops.values()) + ([background.reshape(-1, 2)] if background is not None else []))
    body = []
    if background is not None:
        body += [_polyline(frame(t), SET_COLOUR, 1.0, ' class="trajectory-set"') for t in background]
    body.append(_polyline(frame(gt), GT_COLOUR, 2.5, ' class="ground-truth"'))
    legend = [("ground truth", GT_COLOUR)]
    for i, (name, traj) in enumerate(tops.items()):
        colour = ARM_COLOURS[i % len(ARM_COLOURS)]
        body.append(_polyline(frame(traj), colour, 2.0, f' class="arm" data-arm="{escape(name)}"'))
        legend.append((name, colour))
    if background is not None:
        legend.append(("trajectory set", SET_COLOUR))
    body += _legend(legend, 10, 20)
    return _document(body)


def plot_overlay(gt, predictions: Mapping[str, PredictionSet], out, background: np.ndarray | None = None) -> None:
    _write(out, overlay_svg(gt, predictions, background))


def arm_curves(records, d: float = 2.0, k_max: int = CURVE_K_MAX) -> dict[str, list[tuple[int, float]]]:
    """HitRate curve per arm, pooling the per-instance results of all its seeds."""
    ranked: dict[str, list] = {}
    for r in records:
        ranked.setdefault(r.arm, []).extend(r.report.per_instance.get("ranked_max_dist", []))
    return {arm: hitrate_curve_from_ranked(v, d, k_max) for arm, v in sorted(ranked.items())}


def hitrate_svg(curves: Mapping[str, Sequence[tuple[int, float]]], d: float = 2.0) -> str:
    k_max = max((len(c) for c in curves.values()), default=1)
    x0, x1 = MARGIN + 10, WIDTH - MARGIN
    y0, y1 = HEIGHT - MARGIN, MARGIN

    def px(k, hr):
        x = x0 + (k - 1) / max(k_max - 1, 1) * (x1 - x0)
        return x, y0 - hr * (y0 - y1)

    body = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{_num((x0 + x1) / 2)}" y="{HEIGHT - 8}" font-size="12" font-family="sans-serif" text-anchor="middle">k</text>',
        f'<text x="12" y="{_num((y0 + y1) / 2)}" font-size="12" font-family="sans-serif">HitRate (d={d:g} m)</text>',
    ]
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        _, y = px(1, tick)
        body.append(f'<text x="{x0 - 28}" y="{_num(y + 4)}" font-size="10" font-family="sans-serif">{tick:.2f}</text>')
    legend = []
    for i, (arm, curve) in enumerate(curves.items()):
        colour = ARM_COLOURS[i % len(ARM_COLOURS)]
        pts = np.array([px(k, hr) for k, hr in curve])
        body.append(_polyline(pts, colour, 2.0, f' class="curve" data-arm="{escape(arm)}"'))
        legend.append((arm, colour))
    body += _legend(legend, x0 + 10, y1 + 10)
    return _document(body)


def plot_hitrate_curve(records, out, d: float = 2.0, k_max: int = CURVE_K_MAX) -> dict[str, list[tuple[int, float]]]:
    curves = arm_curves(records, d, k_max)
    _write(out, hitrate_svg(curves, d))
    return curves
