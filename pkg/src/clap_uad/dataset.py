"""BMAD-style dataset layout: scanning, loading, per-epoch subsampling and
synthetic data generation.

Layout::

    <root>/train/good/*.png
    <root>/test/good/*.png
    <root>/test/ungood/*.png
    <root>/validation/{good,ungood}/*.png    (optional)
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import gaussian_filter

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
LABEL_DIRS = {"good": "normal", "ungood": "abnormal"}
MASK_DIR = "ungood_mask"


class LayoutError(Exception):
    """Dataset root does not follow the expected directory layout."""


class DataContractError(Exception):
    """Data violates a pipeline contract (e.g. abnormal sample in train split)."""


@dataclass(frozen=True)
class SampleRecord:
    image_path: str
    label: str  # "normal" | "abnormal"
    split: str  # "train" | "validation" | "test"
    dataset_name: str

    @property
    def target(self) -> int:
        return int(self.label == "abnormal")


@dataclass(frozen=True)
class SplitManifest:
    dataset_name: str
    records: tuple[SampleRecord, ...]
    root: str = ""
    skipped: int = 0

    def __post_init__(self):
        paths = [r.image_path for r in self.records]
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate image_path in manifest")

    def subset(self, split: str, label: str | None = None) -> list[SampleRecord]:
        return [r for r in self.records
                if r.split == split and (label is None or r.label == label)]

    @property
    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for split in SPLITS:
            for label in ("normal", "abnormal"):
                n = len(self.subset(split, label))
                if n or split != "validation":
                    out[f"{split}/{label}"] = n
        return out

    def to_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "root": self.root,
            "skipped": self.skipped,
            "records": [{"path": r.image_path, "label": r.label, "split": r.split}
                        for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitManifest":
        name = d["dataset_name"]
        recs = tuple(SampleRecord(r["path"], r["label"], r["split"], name)
                     for r in d["records"])
        return cls(name, recs, root=d.get("root", ""), skipped=d.get("skipped", 0))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "SplitManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _readable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (UnidentifiedImageError, OSError, SyntaxError):
        return False


def scan_manifest(root_dir: str | Path, dataset_name: str | None = None) -> SplitManifest:
    root = Path(root_dir)
    if not (root / "train" / "good").is_dir():
        raise LayoutError(f"{root}: missing train/good")
    test = root / "test"
    if not any((test / d).is_dir() for d in LABEL_DIRS):
        raise LayoutError(f"{root}: need test/good or test/ungood")

    name = dataset_name or root.resolve().name
    records = []
    skipped = 0
    for split in SPLITS:
        for dirname, label in LABEL_DIRS.items():
            d = root / split / dirname
            if not d.is_dir():
                continue
            for p in sorted(d.glob("*.png")):
                if not _readable(p):
                    skipped += 1
                    log.warning("skipping unreadable image %s", p)
                    continue
                records.append(SampleRecord(str(p), label, split, name))
    return SplitManifest(name, tuple(records), root=str(root), skipped=skipped)


def load_image(path: str | Path, side: int | None = None) -> np.ndarray:
    """Decode to a single-channel float32 array in [0, 1].

    Multi-channel images are averaged to luminance; ``side`` resizes to a
    square with bilinear interpolation.
    """
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
        else:
            arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im,
                             dtype=np.float64) / 255.0
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    arr = arr.astype(np.float32)
    if side is not None and arr.shape != (side, side):
        arr = np.asarray(Image.fromarray(arr, mode="F").resize((side, side), Image.BILINEAR))
    arr = np.clip(arr, 0.0, 1.0)
    if min(arr.shape) < 8:
        raise ValueError(f"{path}: image smaller than 8 pixels")
    return arr


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write a [0,1] float image as 8-bit grayscale PNG."""
    arr = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="L").save(path)


def epoch_subsample(manifest: SplitManifest, n: int, seed: int) -> list[SampleRecord]:
    if n < 1:
        raise ValueError("n must be >= 1")
    train = manifest.subset("train")
    if not train:
        raise DataContractError("train split is empty")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(train), size=min(n, len(train)), replace=False)
    return [train[i] for i in idx]


# ---------------------------------------------------------------------------
# synthetic data


def _texture(rng: np.random.Generator, side: int) -> np.ndarray:
    noise = rng.standard_normal((side, side))
    t = gaussian_filter(noise, sigma=side / 8, mode="wrap")
    t = (t - t.min()) / (t.max() - t.min() + 1e-12)
    return 0.25 + 0.2 * t


def _blob(rng: np.random.Generator, side: int) -> np.ndarray:
    a, b = rng.uniform(0.10, 0.25, size=2) * side
    margin = max(a, b) + 1
    cy, cx = rng.uniform(margin, side - margin, size=2)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[:side, :side].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def synth_normal(rng: np.random.Generator, side: int) -> np.ndarray:
    return _texture(rng, side)


def synth_abnormal(rng: np.random.Generator, side: int) -> tuple[np.ndarray, np.ndarray]:
    img = _texture(rng, side)
    mask = _blob(rng, side)
    img = np.clip(img + rng.uniform(0.4, 0.6) * mask, 0.0, 1.0)
    return img, mask


def generate_synthetic(
    n_normal: int,
    n_abnormal: int,
    side: int,
    seed: int,
    out_dir: str | Path,
    n_test_normal: int | None = None,
) -> SplitManifest:
    """Write a seeded synthetic dataset in the BMAD layout.

    Normals are smooth low-frequency textures; abnormals add one bright
    elliptical blob whose ground-truth mask goes to ``test/ungood_mask``.
    By default half of the normals (rounded down) go to the test split.
    """
    if side < 32:
        raise ValueError("side must be >= 32")
    if n_test_normal is None:
        n_test_normal = n_normal // 2
    if not 0 <= n_test_normal < n_normal:
        raise ValueError("need at least one training normal")
    out = Path(out_dir)
    dirs = {k: out / k for k in ("train/good", "test/good", "test/ungood", f"test/{MASK_DIR}")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)

    normal_ss, abnormal_ss = np.random.SeedSequence(seed).spawn(2)
    n_train = n_normal - n_test_normal
    for i, ss in enumerate(normal_ss.spawn(n_normal)):
        img = synth_normal(np.random.default_rng(ss), side)
        dest = dirs["train/good"] / f"{i:05d}.png" if i < n_train else \
            dirs["test/good"] / f"{i - n_train:05d}.png"
        save_image(dest, img)
    for i, ss in enumerate(abnormal_ss.spawn(n_abnormal)):
        img, mask = synth_abnormal(np.random.default_rng(ss), side)
        save_image(dirs["test/ungood"] / f"{i:05d}.png", img)
        save_image(dirs[f"test/{MASK_DIR}"] / f"{i:05d}.png", mask.astype(np.float32))
    return scan_manifest(out)


def mask_path_for(record: SampleRecord) -> Path:
    """Ground-truth mask location for a synthetic abnormal record."""
    p = Path(record.image_path)
    return p.parent.parent / MASK_DIR / p.name
