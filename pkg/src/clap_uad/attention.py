"""Prompt-conditioned attention maps and their contrastive combination.

A backend maps ``(image, text)`` to a raw saliency grid of any resolution.
Everything downstream (upsampling, min-max normalization, positive minus
negative combination) is backend-agnostic.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

import numpy as np
import torch
import torch.nn.functional as F
import yaml
from scipy.ndimage import gaussian_filter


class BackendError(RuntimeError):
    """The vision-language backend could not be loaded or failed at inference."""


@dataclass(frozen=True)
class PromptSet:
    anatomy: str
    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def __post_init__(self):
        for name in ("positive", "negative"):
            items = tuple(s.strip() for s in getattr(self, name))
            if not items or any(not s for s in items):
                raise ValueError(f"{name} prompts must be a non-empty list of non-blank strings")
            object.__setattr__(self, name, items)

    def to_dict(self) -> dict:
        return {"anatomy": self.anatomy, "positive": list(self.positive),
                "negative": list(self.negative)}


BUNDLED_PROMPTS = ("brain_mri", "liver_ct", "retinal_oct", "chest_xray", "lymph_node", "synthetic")


def load_prompt_set(source: str | Path) -> PromptSet:
    """Load a prompt file (YAML or JSON) or a bundled set by name."""
    if isinstance(source, str) and source in BUNDLED_PROMPTS:
        text = resources.files("clap_uad.prompts").joinpath(f"{source}.yaml").read_text()
    else:
        text = Path(source).read_text()
    d = yaml.safe_load(text)  # JSON is valid YAML
    if not isinstance(d, dict):
        raise ValueError(f"{source}: prompt file must hold a mapping")
    return PromptSet(d.get("anatomy", ""), tuple(d.get("positive") or ()),
                     tuple(d.get("negative") or ()))


@dataclass
class AttentionMap:
    values: np.ndarray
    normalized: bool = True

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class BackendOutput:
    grid: np.ndarray  # raw saliency, any (h, w)
    image_embedding: np.ndarray | None = None
    text_embedding: np.ndarray | None = None


class AttentionBackend(Protocol):
    beta: float

    def __call__(self, image: np.ndarray, text: str) -> BackendOutput: ...


# ---------------------------------------------------------------------------
# backends


@dataclass
class MockBackend:
    """Hermetic backend for tests and desk-scale runs.

    Per comma-separated token: ``bright`` gives the pixel intensity, ``dark``
    gives one minus the intensity, and anything else gives the intensity
    blurred with a Gaussian whose width comes from a hash of the token. Token
    maps are averaged.
    """

    beta: float = 0.0

    @staticmethod
    def token_map(image: np.ndarray, token: str) -> np.ndarray:
        img = image.astype(np.float64)
        t = token.strip().lower()
        if t == "bright":
            return img
        if t == "dark":
            return 1.0 - img
        h = int.from_bytes(hashlib.sha256(t.encode()).digest()[:4], "little")
        sigma = 1.0 + 3.0 * h / 0xFFFFFFFF
        return gaussian_filter(img, sigma=sigma, mode="reflect")

    def __call__(self, image: np.ndarray, text: str) -> BackendOutput:
        tokens = [t for t in text.split(",") if t.strip()]
        if not tokens:
            raise BackendError("empty text prompt")
        grid = np.mean([self.token_map(image, t) for t in tokens], axis=0)
        return BackendOutput(grid)


class PatchSimilarityBackend:
    """Cosine similarity between image-patch embeddings and a text embedding.

    ``image_encoder(image) -> (patches[h, w, d], global[d])`` and
    ``text_encoder(text) -> [d]`` are injected. With ``beta > 0`` the
    text-independent patch-to-global-image similarity is subtracted, acting as
    the image-regularization term. Calls are serialized because wrapped models
    are not assumed reentrant.
    """

    def __init__(self, image_encoder: Callable, text_encoder: Callable, beta: float = 0.0):
        if beta < 0:
            raise ValueError("beta must be >= 0")
        self.image_encoder = image_encoder
        self.text_encoder = text_encoder
        self.beta = beta
        self._lock = threading.Lock()

    def __call__(self, image: np.ndarray, text: str) -> BackendOutput:
        with self._lock:
            try:
                patches, glob = self.image_encoder(image)
                temb = self.text_encoder(text)
            except BackendError:
                raise
            except Exception as exc:
                raise BackendError(f"backend inference failed: {exc}") from exc
        patches = np.asarray(patches, dtype=np.float64)
        glob = np.asarray(glob, dtype=np.float64)
        temb = np.asarray(temb, dtype=np.float64)
        pn = patches / (np.linalg.norm(patches, axis=-1, keepdims=True) + 1e-12)
        grid = pn @ (temb / (np.linalg.norm(temb) + 1e-12))
        if self.beta:
            grid = grid - self.beta * (pn @ (glob / (np.linalg.norm(glob) + 1e-12)))
        return BackendOutput(grid, image_embedding=glob, text_embedding=temb)

    @classmethod
    def from_pretrained(cls, model_name: str, beta: float = 0.0, device: str = "cpu"):
        """Wrap a Hugging Face CLIP checkpoint (name or local path)."""
        try:
            from transformers import CLIPModel, CLIPProcessor

            model = CLIPModel.from_pretrained(model_name).to(device).eval()
            processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:
            raise BackendError(f"cannot load VLM backend {model_name!r}: {exc}") from exc

        @torch.no_grad()
        def image_encoder(image):
            rgb = np.repeat((np.clip(image, 0, 1) * 255).astype(np.uint8)[..., None], 3, axis=2)
            px = processor(images=rgb, return_tensors="pt")["pixel_values"].to(device)
            out = model.vision_model(pixel_values=px)
            tokens = model.vision_model.post_layernorm(out.last_hidden_state)
            tokens = model.visual_projection(tokens)[0]
            patches = tokens[1:]
            side = int(round(patches.shape[0] ** 0.5))
            return (patches.reshape(side, side, -1).cpu().numpy(),
                    tokens[0].cpu().numpy())

        @torch.no_grad()
        def text_encoder(text):
            ids = processor(text=[text], return_tensors="pt", padding=True).to(device)
            return model.get_text_features(**ids)[0].cpu().numpy()

        return cls(image_encoder, text_encoder, beta=beta)


def make_backend(name: str = "mock", model: str | None = None, beta: float = 0.0) -> AttentionBackend:
    if name == "mock":
        return MockBackend(beta=beta)
    if name == "vlm":
        if not model:
            raise BackendError("vlm backend needs a model name or path")
        return PatchSimilarityBackend.from_pretrained(model, beta=beta)
    raise BackendError(f"unknown backend {name!r}")


# ---------------------------------------------------------------------------
# map operations


def normalize_map(raw: np.ndarray) -> AttentionMap:
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("attention map contains NaN or Inf")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return AttentionMap(np.zeros_like(raw))
    return AttentionMap((raw - lo) / (hi - lo))


def _upsample(grid: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.shape == tuple(shape):
        return grid
    t = torch.from_numpy(grid)[None, None]
    return F.interpolate(t, size=shape, mode="bilinear", align_corners=False)[0, 0].numpy()


def compute_saliency(backend: AttentionBackend, image: np.ndarray, prompts,
                     mode: str = "join") -> AttentionMap:
    """Attention map for a prompt list, upsampled to the image grid.

    ``mode="join"`` feeds ``", ".join(prompts)`` as one text; ``"ensemble"``
    averages the raw maps of each prompt.
    """
    prompts = [p for p in prompts]
    if not prompts:
        raise ValueError("prompt list is empty")
    shape = image.shape[:2]
    if mode == "join":
        raw = _upsample(backend(image, ", ".join(prompts)).grid, shape)
    elif mode == "ensemble":
        raw = np.mean([_upsample(backend(image, p).grid, shape) for p in prompts], axis=0)
    else:
        raise ValueError(f"unknown prompt mode {mode!r}")
    return normalize_map(raw)


def contrastive_combine(a_pos: AttentionMap, a_neg: AttentionMap) -> AttentionMap:
    if a_pos.shape != a_neg.shape:
        raise ValueError(f"shape mismatch {a_pos.shape} vs {a_neg.shape}")
    diff = np.maximum(a_pos.values - a_neg.values, 0.0)
    return normalize_map(diff)


@dataclass
class ClapMaps:
    positive: AttentionMap
    negative: AttentionMap | None
    combined: AttentionMap = field(repr=False)


def clap_maps(backend, image, prompt_set: PromptSet, mode: str = "join") -> ClapMaps:
    pos = compute_saliency(backend, image, prompt_set.positive, mode)
    neg = compute_saliency(backend, image, prompt_set.negative, mode)
    return ClapMaps(pos, neg, contrastive_combine(pos, neg))


def clap_attention(backend, image, prompt_set: PromptSet, mode: str = "join") -> AttentionMap:
    return clap_maps(backend, image, prompt_set, mode).combined


def plp_attention(backend, image, prompt_set: PromptSet, mode: str = "join") -> AttentionMap:
    return compute_saliency(backend, image, prompt_set.positive, mode)


# ---------------------------------------------------------------------------
# export


def save_attention(path: str | Path, amap: AttentionMap) -> np.ndarray:
    """Write a 16-bit PNG plus a ``.json`` sidecar; returns the quantized map."""
    from PIL import Image

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    v = amap.values
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    q = np.round(scaled * 65535).astype(np.uint16)
    Image.fromarray(q).save(path)
    path.with_suffix(".json").write_text(
        json.dumps({"min": lo, "max": hi, "shape": list(v.shape)}))
    return lo + q.astype(np.float64) / 65535 * (hi - lo)


def load_attention(path: str | Path) -> AttentionMap:
    from PIL import Image

    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    with Image.open(path) as im:
        q = np.asarray(im, dtype=np.float64)
    vals = meta["min"] + q / 65535 * (meta["max"] - meta["min"])
    return AttentionMap(vals.reshape(meta["shape"]))
