"""Contrastive language prompting (CLAP) for unsupervised medical anomaly detection."""

from .attention import (AttentionMap, MockBackend, PatchSimilarityBackend, PromptSet,
                        clap_attention, compute_saliency, contrastive_combine,
                        load_prompt_set, normalize_map, plp_attention)
from .dataset import SampleRecord, SplitManifest, epoch_subsample, generate_synthetic, scan_manifest
from .evaluation import EvalReport, ScoredSet, compute_auroc, evaluate, render_report
from .masking import MosaicConfig, SaliencyMask, mosaic_obfuscate, q3_threshold, \
    random_training_mask, threshold_mask
from .pipeline import PipelineCfgs, score_pipeline
from .reconstruction import TrainConfig, UNetSpec, build_model, reconstruct, \
    reconstruction_loss, train
from .scoring import GmsConfig, ScoreConfig, anomaly_score, gradient_magnitude, msgms_error_map

__version__ = "0.1.0"
