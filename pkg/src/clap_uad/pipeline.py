"""End-to-end scoring of one image: attention -> mask -> mosaic -> inpaint -> MSGMS."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionMap, PromptSet, clap_maps, plp_attention
from .masking import MosaicConfig, SaliencyMask, mosaic_obfuscate, q3_threshold, \
    random_training_mask, threshold_mask
from .reconstruction import reconstruct
from .scoring import ErrorMap, GmsConfig, ScoreConfig, anomaly_score, msgms_error_map

STRATEGIES = ("clap", "plp", "none")


@dataclass(frozen=True)
class PipelineCfgs:
    mosaic: MosaicConfig = field(default_factory=MosaicConfig)
    gms: GmsConfig = field(default_factory=GmsConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    prompt_mode: str = "join"


@dataclass
class PipelineResult:
    attention: AttentionMap | None
    mask: SaliencyMask
    obfuscated: np.ndarray
    reconstructed: np.ndarray
    error_map: ErrorMap
    score: float
    threshold: float = float("nan")


def strategy_attention(backend, image, prompt_set: PromptSet, strategy: str,
                       mode: str = "join") -> AttentionMap:
    if strategy == "clap":
        return clap_maps(backend, image, prompt_set, mode).combined
    if strategy == "plp":
        return plp_attention(backend, image, prompt_set, mode)
    raise ValueError(f"strategy {strategy!r} has no attention map")


def score_pipeline(backend, model, image: np.ndarray, prompt_set: PromptSet,
                   cfgs: PipelineCfgs = PipelineCfgs(), strategy: str = "clap",
                   mask_seed=0) -> PipelineResult:
    """Score one image.

    ``strategy="none"`` is the attention-free control: a random cell mask
    seeded by ``mask_seed`` replaces the saliency mask.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy == "none":
        amap, thr = None, float("nan")
        mask = random_training_mask(image.shape, cfgs.mosaic, mask_seed)
    else:
        amap = strategy_attention(backend, image, prompt_set, strategy, cfgs.prompt_mode)
        thr = q3_threshold(amap)
        mask = threshold_mask(amap)
    obf = mosaic_obfuscate(image, mask, cfgs.mosaic)
    recon = reconstruct(model, obf)
    err = msgms_error_map(image, recon, cfgs.gms)
    return PipelineResult(amap, mask, obf, recon, err, anomaly_score(err, cfgs.score), thr)
