"""Q3 saliency thresholding and mosaic obfuscation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .attention import AttentionMap

Q3_Z = 0.674


@dataclass(frozen=True)
class MosaicConfig:
    cell_size: int = 8

    def __post_init__(self):
        if self.cell_size < 1:
            raise ValueError("cell_size must be positive")


@dataclass
class SaliencyMask:
    bits: np.ndarray

    @property
    def selected_fraction(self) -> float:
        return float(self.bits.sum()) / self.bits.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, AttentionMap) else np.asarray(m, dtype=np.float64)


def q3_threshold(amap: AttentionMap | np.ndarray) -> float:
    """Mean plus 0.674 population standard deviations."""
    v = _values(amap)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("attention map contains NaN or Inf")
    return float(v.mean() + Q3_Z * v.std())


def threshold_mask(amap: AttentionMap | np.ndarray) -> SaliencyMask:
    v = _values(amap)
    return SaliencyMask(v > q3_threshold(v))


def _cell_reduce(a: np.ndarray, cell: int, op=np.add) -> np.ndarray:
    """Reduce over each grid cell (last row/column cells may be smaller)."""
    ys = np.arange(0, a.shape[0], cell)
    xs = np.arange(0, a.shape[1], cell)
    return op.reduceat(op.reduceat(a, ys, axis=0), xs, axis=1)


def _cell_expand(g: np.ndarray, shape: tuple[int, int], cell: int) -> np.ndarray:
    return np.repeat(np.repeat(g, cell, axis=0), cell, axis=1)[:shape[0], :shape[1]]


def mosaic_obfuscate(image: np.ndarray, mask: SaliencyMask, cfg: MosaicConfig = MosaicConfig()) -> np.ndarray:
    """Replace every grid cell touching the mask with the cell mean."""
    bits = mask.bits if isinstance(mask, SaliencyMask) else np.asarray(mask, dtype=bool)
    shape = bits.shape
    if image.shape[:2] != shape:
        raise ValueError(f"shape mismatch {image.shape} vs {shape}")
    c = cfg.cell_size
    if c > min(shape):
        raise ValueError("cell_size exceeds image size")
    if not bits.any():
        return image.copy()
    hit = _cell_expand(_cell_reduce(bits.astype(np.int64), c) > 0, shape, c)
    count = _cell_reduce(np.ones(shape), c)
    sums = _cell_reduce(image.astype(np.float64), c)
    if image.ndim == 3:
        count = count[..., None]
        hit = hit[..., None]
    means = sums / count
    # constant cells keep their exact value so a second pass is a no-op
    lo = _cell_reduce(image, c, np.minimum)
    means = np.where(lo == _cell_reduce(image, c, np.maximum), lo, means)
    means = _cell_expand(means, shape, c).astype(image.dtype)
    return np.where(hit, means, image)


def random_training_mask(shape: tuple[int, int], cfg: MosaicConfig, seed) -> SaliencyMask:
    """Random set of whole grid cells covering roughly 5 to 25% of the image."""
    h, w = shape
    c = cfg.cell_size
    rng = np.random.default_rng(seed)
    gh, gw = -(-h // c), -(-w // c)
    frac = rng.uniform(0.05, 0.25)
    k = max(1, int(round(frac * gh * gw)))
    chosen = rng.choice(gh * gw, size=k, replace=False)
    grid = np.zeros(gh * gw, dtype=bool)
    grid[chosen] = True
    bits = np.kron(grid.reshape(gh, gw), np.ones((c, c), dtype=bool))[:h, :w]
    return SaliencyMask(bits.astype(bool))


def save_mask(path: str | Path, mask: SaliencyMask) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.bits).convert("1").save(path)


def load_mask(path: str | Path) -> SaliencyMask:
    with Image.open(path) as im:
        return SaliencyMask(np.asarray(im.convert("L")) > 127)
