"""Agent-centred, heading-up bird's-eye-view rasterization of a scene."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .scene import HISTORY_LEN, Category, Scene, to_agent_frame

DEFAULT_SIZE = 64
DEFAULT_RESOLUTION = 0.5
# round agent-frame coordinates so exact rigid motions of the world give identical rasters
_COORD_DECIMALS = 9

AGENT_BOX = {
    Category.TARGET_VEHICLE: (4.5, 2.0),
    Category.OTHER_VEHICLE: (4.5, 2.0),
    Category.PEDESTRIAN: (1.0, 1.0),
}

RGB = tuple[float, float, float]


def _check_rgb(name: str, rgb) -> RGB:
    rgb = tuple(float(v) for v in rgb)
    if len(rgb) != 3 or not all(0.0 <= v <= 1.0 for v in rgb):
        raise ValueError(f"palette entry {name!r} must be an RGB triple in [0, 1], got {rgb}")
    return rgb


@dataclass(frozen=True)
class Palette:
    categories: Mapping[Category, RGB] = field(
        default_factory=lambda: {
            Category.TARGET_VEHICLE: (1.0, 0.0, 0.0),
            Category.OTHER_VEHICLE: (0.0, 0.4, 1.0),
            Category.PEDESTRIAN: (1.0, 0.8, 0.0),
        }
    )
    layers: Mapping[str, RGB] = field(
        default_factory=lambda: {
            "drivable_area": (0.35, 0.35, 0.35),
            "walkway": (0.2, 0.5, 0.2),
            "crosswalk": (0.85, 0.85, 0.85),
        }
    )
    background: RGB = (0.0, 0.0, 0.0)
    fade: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.fade <= 1.0:
            raise ValueError(f"fade factor must lie in (0, 1], got {self.fade}")
        cats = {Category(k): _check_rgb(str(k), v) for k, v in self.categories.items()}
        missing = set(Category) - set(cats)
        if missing:
            raise ValueError(f"palette lacks categories {sorted(c.value for c in missing)}")
        layers = {k: _check_rgb(k, v) for k, v in self.layers.items()}
        background = _check_rgb("background", self.background)
        target = cats[Category.TARGET_VEHICLE]
        others = [v for k, v in cats.items() if k is not Category.TARGET_VEHICLE]
        if target in others + list(layers.values()) + [background]:
            raise ValueError("target colour must differ from every other palette entry")
        object.__setattr__(self, "categories", cats)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "background", background)

    def faded(self, category: Category, age: int) -> np.ndarray:
        bg = np.asarray(self.background)
        col = np.asarray(self.categories[category])
        return bg + self.fade**age * (col - bg)


@dataclass(frozen=True)
class Raster:
    pixels: np.ndarray
    meters_per_pixel: float
    agent_pixel: tuple[int, int]

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


def default_anchor(size: int) -> tuple[int, int]:
    """Anchor leaves three quarters of the rows ahead of the agent."""
    return (size * 3) // 4, size // 2


def _to_pixels(local: np.ndarray, anchor, resolution) -> np.ndarray:
    """Agent-frame metres to fractional (row, col); forward is up, left is left."""
    local = np.round(local, _COORD_DECIMALS)
    rows = anchor[0] - local[..., 0] / resolution
    cols = anchor[1] - local[..., 1] / resolution
    return np.stack([rows, cols], axis=-1)


def polygon_mask(vertices: np.ndarray, size: int) -> np.ndarray:
    """Nonzero-winding fill of pixel centres inside a polygon given in (row, col) pixel space."""
    mask = np.zeros((size, size), dtype=bool)
    if len(vertices) < 3:
        return mask
    r = vertices[:, 0]
    c = vertices[:, 1]
    r0 = max(int(np.floor(r.min())), 0)
    r1 = min(int(np.ceil(r.max())), size - 1)
    c0 = max(int(np.floor(c.min())), 0)
    c1 = min(int(np.ceil(c.max())), size - 1)
    if r0 > r1 or c0 > c1:
        return mask
    rows = np.arange(r0, r1 + 1, dtype=np.float64)[:, None]
    cols = np.arange(c0, c1 + 1, dtype=np.float64)[None, :]
    winding = np.zeros((rows.shape[0], cols.shape[1]), dtype=np.int32)
    rj, cj = np.roll(r, 1), np.roll(c, 1)
    for ri_, ci_, rj_, cj_ in zip(r, c, rj, cj):
        if ri_ == rj_:
            continue
        straddles = (ri_ > rows) != (rj_ > rows)
        cross = ci_ + (rows - ri_) * (cj_ - ci_) / (rj_ - ri_)
        winding += np.where(straddles & (cols < cross), 1 if rj_ > ri_ else -1, 0)
    mask[r0 : r1 + 1, c0 : c1 + 1] = winding != 0
    return mask


def _box(state, category) -> np.ndarray:
    length, width = AGENT_BOX[category]
    c, s = np.cos(state.heading), np.sin(state.heading)
    corners = np.array(
        [[length / 2, width / 2], [-length / 2, width / 2], [-length / 2, -width / 2], [length / 2, -width / 2]]
    )
    return corners @ np.array([[c, s], [-s, c]]) + np.array([state.x, state.y])


def rasterize(
    scene: Scene,
    palette: Palette | None = None,
    size: int = DEFAULT_SIZE,
    resolution: float = DEFAULT_RESOLUTION,
) -> Raster:
    """Render ``scene`` centred on its target agent, heading up.

    Paint order is background, drivable area, walkway, crosswalk, agent
    history (oldest first, faded toward the background), current agents and
    finally the target. Anything outside the canvas is clipped.
    """
    palette = palette or Palette()
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    anchor = default_anchor(size)
    pose = scene.target.current.pose
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = palette.background

    def paint(world_poly, colour):
        px = _to_pixels(to_agent_frame(world_poly, pose), anchor, resolution)
        img[polygon_mask(px, size)] = colour

    for layer in ("drivable_area", "walkway", "crosswalk"):
        for poly in scene.map_layers[layer]:
            paint(poly, palette.layers[layer])

    for age in range(HISTORY_LEN - 1, 0, -1):
        for agent in scene.agents:
            past = agent.padded_history()[HISTORY_LEN - 1 - age]
            paint(_box(past, agent.category), palette.faded(agent.category, age))

    target = scene.target
    for agent in scene.agents:
        if agent.agent_id != target.agent_id:
            paint(_box(agent.current, agent.category), palette.categories[agent.category])
    paint(_box(target.current, target.category), palette.categories[Category.TARGET_VEHICLE])
    return Raster(img, float(resolution), anchor)


def quantize(pixels: np.ndarray) -> np.ndarray:
    """8-bit quantization with round-half-up."""
    return np.floor(np.clip(pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def raster_to_png(raster: Raster, path) -> None:
    from PIL import Image

    path = Path(path)
    try:
        Image.fromarray(quantize(raster.pixels)).save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write raster to {path}: {exc}") from exc
