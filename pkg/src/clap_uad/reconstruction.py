"""Inpainting U-Net trained on normal images only."""

from __future__ import annotations

import io
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import DataContractError, SplitManifest, epoch_subsample, load_image
from .masking import MosaicConfig, mosaic_obfuscate, random_training_mask
from .scoring import GmsConfig, msgms_map_t

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UNetSpec:
    depth: int = 5
    base_channels: int = 32

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be positive")

    @property
    def multiple(self) -> int:
        return 2 ** self.depth


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    samples_per_epoch: int = 3000
    batch_size: int = 8
    learning_rate: float = 1e-4
    seed: int = 0
    loss_lambda: float = 1.0
    image_side: int | None = 256
    cache_images: bool = True

    def __post_init__(self):
        for k in ("epochs", "samples_per_epoch", "batch_size", "learning_rate"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive")


def double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
    )


class Up(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.reduce = nn.Conv2d(cin, cout, 3, padding=1)
        self.conv = double_conv(2 * cout, cout)

    def forward(self, x, skip):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.reduce(x)
        return self.conv(torch.cat([x, skip], dim=1))


class UNet(nn.Module):
    """``depth`` encoder blocks, each feeding its own skip into the matching
    decoder block; a bottleneck block sits between the two halves."""

    def __init__(self, spec: UNetSpec = UNetSpec()):
        super().__init__()
        self.spec = spec
        chans = [spec.base_channels * 2 ** i for i in range(spec.depth)]
        self.encoder = nn.ModuleList(
            double_conv(cin, cout) for cin, cout in zip([1] + chans[:-1], chans))
        self.bottleneck = double_conv(chans[-1], 2 * chans[-1])
        self.decoder = nn.ModuleList(
            Up(2 * c, c) for c in reversed(chans))
        self.head = nn.Conv2d(chans[0], 1, 1)

    @property
    def n_skips(self) -> int:
        return len(self.decoder)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2:]
        m = self.spec.multiple
        if h < m or w < m:
            raise ValueError(f"input {h}x{w} smaller than {m} for depth {self.spec.depth}")
        ph, pw = -h % m, -w % m
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect" if max(ph, pw) < min(h, w) else "replicate")
        skips = []
        for block in self.encoder:
            x = block(x)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        x = self.bottleneck(x)
        for up, skip in zip(self.decoder, reversed(skips)):
            x = up(x, skip)
        return torch.sigmoid(self.head(x))[..., :h, :w]


@dataclass
class ReconstructionModel:
    net: nn.Module
    spec: UNetSpec
    seed: int = 0
    training_log: list[float] = field(default_factory=list)
    train_cfg: TrainConfig | None = None
    optimizer_state: dict | None = None


def build_model(spec: UNetSpec = UNetSpec(), seed: int = 0) -> ReconstructionModel:
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(seed)
    try:
        net = UNet(spec)
    finally:
        torch.random.set_rng_state(gen_state)
    return ReconstructionModel(net.eval(), spec, seed)


def _to_batch(images) -> torch.Tensor:
    arr = np.stack([np.asarray(i, dtype=np.float32) for i in images])[:, None]
    return torch.from_numpy(arr)


@torch.no_grad()
def reconstruct(model: ReconstructionModel | nn.Module, obfuscated: np.ndarray) -> np.ndarray:
    net = model.net if isinstance(model, ReconstructionModel) else model
    was_training = getattr(net, "training", False)
    if was_training:
        net.eval()
    out = net(_to_batch([obfuscated]))[0, 0].clamp(0.0, 1.0).numpy()
    if was_training:
        net.train()
    return out


def reconstruction_loss_t(x: torch.Tensor, y: torch.Tensor, lam: float = 1.0,
                          gms: GmsConfig = GmsConfig()) -> torch.Tensor:
    """MSE plus ``lam`` times the mean MSGMS error, on (N,1,H,W) tensors."""
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {tuple(x.shape)} vs {tuple(y.shape)}")
    return F.mse_loss(y, x) + lam * msgms_map_t(x, y, gms).mean()


def reconstruction_loss(image: np.ndarray, recon: np.ndarray, lam: float = 1.0,
                        gms: GmsConfig = GmsConfig()) -> float:
    a = torch.as_tensor(np.asarray(image, dtype=np.float64))[None, None]
    b = torch.as_tensor(np.asarray(recon, dtype=np.float64))[None, None]
    return float(reconstruction_loss_t(a, b, lam, gms))


def _epoch_seed(seed: int, epoch: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, epoch])


def train(
    model: ReconstructionModel,
    manifest: SplitManifest,
    cfg: TrainConfig = TrainConfig(),
    mosaic: MosaicConfig = MosaicConfig(),
    gms: GmsConfig = GmsConfig(),
    progress=None,
) -> ReconstructionModel:
    """Reconstruction-by-inpainting on normal training images.

    Each epoch draws ``samples_per_epoch`` records, mosaics a random set of
    cells in each and fits the network to restore the original. Epoch
    randomness is keyed on ``(seed, epoch index)``, so a resumed run
    continues the same stream as an uninterrupted one.
    """
    train_recs = manifest.subset("train")
    bad = [r.image_path for r in train_recs if r.label != "normal"]
    if bad:
        raise DataContractError(f"abnormal samples in train split: {bad[:3]}")

    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    if model.optimizer_state is not None:
        opt.load_state_dict(model.optimizer_state)
    cache: dict[str, np.ndarray] = {}

    def get(path):
        if not cfg.cache_images:
            return load_image(path, cfg.image_side)
        if path not in cache:
            cache[path] = load_image(path, cfg.image_side)
        return cache[path]

    start = len(model.training_log)
    net.train()
    for epoch in range(start, start + cfg.epochs):
        sub_seed, mask_ss = _epoch_seed(cfg.seed, epoch).spawn(2)
        recs = epoch_subsample(manifest, cfg.samples_per_epoch,
                               int(sub_seed.generate_state(1)[0]))
        mask_seeds = mask_ss.spawn(len(recs))
        total, count = 0.0, 0
        for b in range(0, len(recs), cfg.batch_size):
            idx = range(b, min(b + cfg.batch_size, len(recs)))
            clean = [get(recs[i].image_path) for i in idx]
            dirty = [mosaic_obfuscate(img, random_training_mask(img.shape, mosaic, mask_seeds[i]), mosaic)
                     for img, i in zip(clean, idx)]
            x, z = _to_batch(clean), _to_batch(dirty)
            loss = reconstruction_loss_t(x, net(z), cfg.loss_lambda, gms)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        model.training_log.append(total / count)
        log.info("epoch %d loss %.6f", epoch + 1, model.training_log[-1])
        if progress:
            progress(epoch + 1, model.training_log[-1])
    net.eval()
    model.optimizer_state = opt.state_dict()
    model.train_cfg = cfg
    return model


# ---------------------------------------------------------------------------
# checkpoints: one zip archive with ``params.pt`` and ``meta.json``


def save_checkpoint(model: ReconstructionModel, path: str | Path) -> None:
    meta = {
        "spec": asdict(model.spec),
        "seed": model.seed,
        "train_cfg": asdict(model.train_cfg) if model.train_cfg else None,
        "training_log": model.training_log,
    }
    buf = io.BytesIO()
    torch.save({"params": model.net.state_dict(), "optimizer": model.optimizer_state}, buf)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, data in (("params.pt", buf.getvalue()),
                           ("meta.json", json.dumps(meta, indent=2).encode())):
            zf.writestr(zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0)), data)


def load_checkpoint(path: str | Path) -> ReconstructionModel:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        blobs = torch.load(io.BytesIO(zf.read("params.pt")), weights_only=True)
    spec = UNetSpec(**meta["spec"])
    net = UNet(spec)
    net.load_state_dict(blobs["params"])
    cfg = TrainConfig(**meta["train_cfg"]) if meta.get("train_cfg") else None
    return ReconstructionModel(net.eval(), spec, meta["seed"], list(meta["training_log"]),
                               cfg, blobs.get("optimizer"))
