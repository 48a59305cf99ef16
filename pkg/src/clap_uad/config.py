"""Pipeline configuration: defaults < config file < environment < CLI flags.

Environment overrides use ``CLAP_UAD_<KEY>``, with ``__`` separating nested
sections, e.g. ``CLAP_UAD_TRAIN__EPOCHS=5`` or ``CLAP_UAD_SEED=3``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .attention import load_prompt_set
from .masking import MosaicConfig
from .pipeline import STRATEGIES, PipelineCfgs
from .reconstruction import TrainConfig, UNetSpec
from .scoring import GmsConfig, ScoreConfig

ENV_PREFIX = "CLAP_UAD_"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    name: str = "mock"
    model: str | None = None
    beta: float = 0.0
    prompt_mode: str = "join"


SECTIONS = {
    "backend": BackendConfig,
    "mosaic": MosaicConfig,
    "gms": GmsConfig,
    "score": ScoreConfig,
    "unet": UNetSpec,
    "train": TrainConfig,
}


@dataclass(frozen=True)
class PipelineConfig:
    data: str | None = None
    prompts: str = "synthetic"
    image_side: int | None = 256
    strategies: tuple[str, ...] = ("clap",)
    out: str | None = None
    seed: int = 0
    backend: BackendConfig = field(default_factory=BackendConfig)
    mosaic: MosaicConfig = field(default_factory=MosaicConfig)
    gms: GmsConfig = field(default_factory=GmsConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    unet: UNetSpec = field(default_factory=UNetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        bad = [s for s in self.strategies if s not in STRATEGIES]
        if bad:
            raise ConfigError(f"unknown strategies {bad}; choose from {STRATEGIES}")

    @property
    def train_config(self) -> TrainConfig:
        """Training config with the global seed and image side propagated."""
        return replace(self.train, seed=self.seed, image_side=self.image_side)

    @property
    def pipeline_cfgs(self) -> PipelineCfgs:
        return PipelineCfgs(self.mosaic, self.gms, self.score, self.backend.prompt_mode)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategies"] = list(self.strategies)
        return d

    def digest(self) -> str:
        """Hash of everything that affects scores; paths are left out."""
        d = self.to_dict()
        for k in ("data", "out", "prompts"):
            d.pop(k)
        d["strategies"] = sorted(d["strategies"])
        d["prompt_set"] = load_prompt_set(self.prompts).to_dict()
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def from_dict(d: dict) -> PipelineConfig:
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    for k, v in d.items():
        if k in SECTIONS:
            cls = SECTIONS[k]
            sub_known = {f.name for f in fields(cls)}
            if not isinstance(v, dict) or set(v) - sub_known:
                raise ConfigError(f"bad keys in section {k!r}: {v}")
            try:
                kw[k] = cls(**v)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"section {k!r}: {exc}") from exc
        elif k == "strategies":
            kw[k] = tuple(v.split(",") if isinstance(v, str) else v)
        else:
            kw[k] = v
    try:
        return PipelineConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        node = out
        for p in path[:-1]:
            node = node.setdefault(p, {})
        node[path[-1]] = yaml.safe_load(raw)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None,
                environ=None) -> PipelineConfig:
    d = asdict(PipelineConfig())
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        loaded = yaml.safe_load(text) or {}  # JSON parses as YAML too
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        d = _merge(d, loaded)
    d = _merge(d, env_overrides(environ))
    d = _merge(d, overrides or {})
    return from_dict(d)
