"""Multi-scale gradient magnitude similarity (MSGMS) error and anomaly scores.

The torch functions operate on ``(N, 1, H, W)`` batches and are
differentiable, so the same error term serves as a training loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class GmsConfig:
    scales: int = 4
    c: float = 0.0026

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError("scales must be >= 1")
        if self.c <= 0:
            raise ValueError("c must be > 0")


@dataclass(frozen=True)
class ScoreConfig:
    smooth: bool = True
    kernel: int = 21


@dataclass
class ErrorMap:
    values: np.ndarray
    scales_used: int


class ScaleError(ValueError):
    pass


def gradient_magnitude_t(x: torch.Tensor) -> torch.Tensor:
    """Prewitt gradient magnitude with reflect-padded borders, (N,1,H,W).

    Written as differences of neighbours so flat regions give exact zeros.
    """
    mode = "reflect" if min(x.shape[-2:]) > 1 else "replicate"
    p = F.pad(x, (1, 1, 1, 1), mode=mode)
    dx = p[..., :, :-2] - p[..., :, 2:]
    dy = p[..., :-2, :] - p[..., 2:, :]
    gx = (dx[..., :-2, :] + dx[..., 1:-1, :] + dx[..., 2:, :]) / 3.0
    gy = (dy[..., :-2] + dy[..., 1:-1] + dy[..., 2:]) / 3.0
    sq = gx ** 2 + gy ** 2
    # sqrt has an infinite derivative at 0; route those pixels around it
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def gradient_magnitude(image: np.ndarray) -> np.ndarray:
    t = torch.as_tensor(np.asarray(image, dtype=np.float64))[None, None]
    return gradient_magnitude_t(t)[0, 0].numpy()


def msgms_map_t(x: torch.Tensor, y: torch.Tensor, cfg: GmsConfig = GmsConfig()) -> torch.Tensor:
    """Per-pixel MSGMS error averaged over the scale pyramid, (N,1,H,W)."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    h, w = x.shape[-2:]
    if min(h, w) < 2 ** (cfg.scales - 1):
        raise ScaleError(f"{h}x{w} image too small for {cfg.scales} scales")
    total = torch.zeros_like(x)
    for s in range(cfg.scales):
        if s:
            x = F.avg_pool2d(x, 2, ceil_mode=True)
            y = F.avg_pool2d(y, 2, ceil_mode=True)
        gx, gy = gradient_magnitude_t(x), gradient_magnitude_t(y)
        term = 1.0 - (2 * gx * gy + cfg.c) / (gx ** 2 + gy ** 2 + cfg.c)
        if s:
            term = F.interpolate(term, size=(h, w), mode="bilinear", align_corners=False)
        total = total + term
    return total / cfg.scales


def msgms_error_map(image: np.ndarray, recon: np.ndarray, cfg: GmsConfig = GmsConfig()) -> ErrorMap:
    a = torch.as_tensor(np.asarray(image, dtype=np.float64))[None, None]
    b = torch.as_tensor(np.asarray(recon, dtype=np.float64))[None, None]
    return ErrorMap(msgms_map_t(a, b, cfg)[0, 0].numpy(), cfg.scales)


def smooth_map(values: np.ndarray, kernel: int) -> np.ndarray:
    """Stride-1 k x k mean filter with reflect padding.

    The kernel shrinks to the largest odd size the map can reflect-pad.
    """
    h, w = values.shape
    k = min(kernel, 2 * ((min(h, w) - 1) // 2) + 1)
    if k <= 1:
        return values
    p = k // 2
    t = torch.as_tensor(np.asarray(values, dtype=np.float64))[None, None]
    t = F.pad(t, (p, p, p, p), mode="reflect")
    return F.avg_pool2d(t, k, stride=1)[0, 0].numpy()


def anomaly_score(error_map: ErrorMap | np.ndarray, cfg: ScoreConfig = ScoreConfig()) -> float:
    v = error_map.values if isinstance(error_map, ErrorMap) else np.asarray(error_map, dtype=np.float64)
    if v.size == 0:
        raise ValueError("empty error map")
    if cfg.smooth:
        v = smooth_map(v, cfg.kernel)
    return float(v.max())
