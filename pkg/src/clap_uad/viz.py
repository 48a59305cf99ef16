"""Heatmap and overlay PNGs in the style of attention-map figures."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib import colormaps
from PIL import Image

CMAP = "viridis"
ALPHA = 0.5


def _gray_rgb(image: np.ndarray) -> np.ndarray:
    g = np.clip(image, 0, 1)
    return np.repeat(g[..., None], 3, axis=2)


def heatmap_overlay(image: np.ndarray, values: np.ndarray, vmax: float | None = None) -> np.ndarray:
    """Colormapped ``values`` alpha-blended over the grayscale image."""
    v = np.asarray(values, dtype=np.float64)
    top = v.max() if vmax is None else vmax
    v = v / top if top > 0 else np.zeros_like(v)
    colored = colormaps[CMAP](np.clip(v, 0, 1))[..., :3]
    rgb = (1 - ALPHA) * _gray_rgb(image) + ALPHA * colored
    return np.round(rgb * 255).astype(np.uint8)


def mask_overlay(image: np.ndarray, bits: np.ndarray) -> np.ndarray:
    rgb = _gray_rgb(image)
    red = np.zeros_like(rgb)
    red[..., 0] = 1.0
    rgb = np.where(bits[..., None], (1 - ALPHA) * rgb + ALPHA * red, rgb)
    return np.round(rgb * 255).astype(np.uint8)


def save_rgb(path: str | Path, rgb: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb, mode="RGB").save(path)
