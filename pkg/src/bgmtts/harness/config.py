"""Dataclass configuration for the end-to-end toy pipeline.

Defaults are the CPU-scale preset. A JSON file passed with ``--config``
overrides any subset of fields; nested sections merge key by key.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from ..gsttts import Text2MelConfig, TtsOptimConfig
from ..musicfilter import AdamConfig, MusicFilterConfig
from ..ssrn import SsrnConfig

VARIANTS = ("TTS", "GST", "GST+Aux", "GST+MF", "GST+MF+Aux")


@dataclass
class CorpusConfig:
    n_utts: int = 240  # target-speaker utterances
    filter_utts: int = 160  # multi-speaker utterances used only for the music filter
    filter_speakers: int = 8
    n_music: int = 40  # music variety drives generalisation to unseen clips
    n_eval_music: int = 2  # held out from filter training
    music_duration: float = 6.0
    snr_lo: float = 0.0
    snr_hi: float = 20.0
    test_fraction: float = 0.1


@dataclass
class FilterTrainConfig:
    model: MusicFilterConfig = field(default_factory=MusicFilterConfig.toy)
    optim: AdamConfig = field(default_factory=AdamConfig)
    steps: int = 1500
    batch_size: int = 8
    crop_frames: int = 48


@dataclass
class TtsTrainConfig:
    model: Text2MelConfig = field(default_factory=Text2MelConfig)
    optim: TtsOptimConfig = field(default_factory=TtsOptimConfig)
    steps: int = 400
    batch_size: int = 16
    lam: Optional[float] = None  # None: taken from the clean-fraction table


@dataclass
class SsrnTrainConfig:
    model: SsrnConfig = field(default_factory=lambda: SsrnConfig(channels=32, universal_speakers=4))
    optim: TtsOptimConfig = field(default_factory=TtsOptimConfig)
    steps: int = 300
    batch_size: int = 16
    crop: int = 16


@dataclass
class AblationConfig:
    variants: list = field(default_factory=lambda: list(VARIANTS))
    clean_fractions: list = field(default_factory=lambda: [0.1, 0.3, 0.5])
    seeds: list = field(default_factory=lambda: [0])
    eval_snrs: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])


@dataclass
class PipelineConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    filter: FilterTrainConfig = field(default_factory=FilterTrainConfig)
    tts: TtsTrainConfig = field(default_factory=TtsTrainConfig)
    ssrn: SsrnTrainConfig = field(default_factory=SsrnTrainConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))


def default_lambda(clean_fraction: float) -> float:
    """AQC loss weight: the lowest clean ratio (0.5 h of 5 h) gets 0.001, larger ratios 0.01."""
    return 0.001 if clean_fraction <= 0.1 + 1e-9 else 0.01


def merge(obj, overrides: dict):
    """Return a copy of dataclass ``obj`` with ``overrides`` applied recursively.

    Unknown keys raise ``KeyError`` so typos in config files do not pass silently.
    """
    if not isinstance(overrides, dict):
        raise TypeError(f"expected a JSON object for {type(obj).__name__}, got {type(overrides).__name__}")
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, value in overrides.items():
        if key not in names:
            raise KeyError(f"{type(obj).__name__} has no field {key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            value = merge(current, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)  # JSON has no tuples
        updates[key] = value
    return dataclasses.replace(obj, **updates)


def load_config(path=None, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    if path is None:
        return cfg
    with open(path, encoding="utf-8") as fh:
        return merge(cfg, json.load(fh))


def dump_config(cfg: PipelineConfig, path=None) -> str:
    text = json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text
