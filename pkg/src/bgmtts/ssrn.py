"""Spectrogram super-resolution network: coarse 80-bin mel -> full-rate
linear magnitude, both normalised to [0, 1]."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .dsp import LogMinMax
from .gsttts import DivergenceMonitor, TtsOptimConfig, tts_loss
from .layers import Conv1d, highway_stack

logger = logging.getLogger(__name__)

KIND = "ssrn"


@dataclass
class SsrnConfig:
    n_mels: int = 80
    n_bins: int = 513
    channels: int = 64
    upsample: int = 4
    pre: list = field(default_factory=lambda: [[3, 1], [3, 3]])
    per_stage: list = field(default_factory=lambda: [[3, 1], [3, 3]])
    post: list = field(default_factory=lambda: [[3, 1], [3, 1]])
    out_layers: int = 2
    universal_speakers: int = 0  # perturbed copies standing in for a multi-speaker corpus

    def __post_init__(self):
        if self.upsample < 1 or self.upsample & (self.upsample - 1):
            raise ValueError("upsample factor must be a power of two")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "SsrnConfig":
        return cls(**d)


class SsrnNet(nn.Module):
    def __init__(self, cfg: SsrnConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        layers = [Conv1d(cfg.n_mels, c), highway_stack(c, cfg.pre)]
        for _ in range(int(math.log2(cfg.upsample))):
            layers += [nn.ConvTranspose1d(c, c, 2, stride=2), highway_stack(c, cfg.per_stage)]
        layers += [Conv1d(c, 2 * c), highway_stack(2 * c, cfg.post), Conv1d(2 * c, cfg.n_bins)]
        layers += [Conv1d(cfg.n_bins, cfg.n_bins, activation=F.relu) for _ in range(cfg.out_layers)]
        layers.append(Conv1d(cfg.n_bins, cfg.n_bins))
        self.net = nn.Sequential(*layers)

    def forward(self, mel):
        """``mel`` [B, T, n_mels] -> logits [B, T * upsample, n_bins]."""
        if mel.shape[-1] != self.cfg.n_mels:
            raise ValueError(f"expected {self.cfg.n_mels} mel bins, got {mel.shape[-1]}")
        return self.net(mel.transpose(1, 2)).transpose(1, 2)


class Ssrn:
    def __init__(self, config: SsrnConfig, mel_stats: LogMinMax, mag_stats: LogMinMax,
                 model: Optional[SsrnNet] = None, step: int = 0):
        self.config = config
        self.mel_stats = mel_stats
        self.mag_stats = mag_stats
        self.model = model if model is not None else SsrnNet(config)
        self.step = step
        self.optimizer_state = None
        self.history: list = []

    def save(self, path) -> Path:
        return checkpoint.save_checkpoint(
            path, KIND, self.config.to_dict(), self.step,
            {"model": self.model.state_dict(), "optimizer": self.optimizer_state},
            extra={"mel_stats": self.mel_stats.to_dict(), "mag_stats": self.mag_stats.to_dict()})

    @classmethod
    def load(cls, path, config: Optional[SsrnConfig] = None) -> "Ssrn":
        header, payload = checkpoint.load_checkpoint(
            path, KIND, config.to_dict() if config is not None else None)
        cfg = SsrnConfig.from_dict(header["config"])
        model = SsrnNet(cfg)
        if next(iter(payload["model"].values())).dtype == torch.float64:
            model.double()
        model.load_state_dict(payload["model"])
        model.eval()
        s = cls(cfg, LogMinMax(**header["mel_stats"]), LogMinMax(**header["mag_stats"]), model, header["step"])
        s.optimizer_state = payload.get("optimizer")
        return s

    def forward(self, mel: np.ndarray) -> np.ndarray:
        return ssrn_forward(mel, self.model)


def ssrn_forward(mel: np.ndarray, model: SsrnNet) -> np.ndarray:
    """Normalised coarse mel [T, n_mels] -> normalised magnitude [T * factor, n_bins] in (0, 1)."""
    mel = getattr(mel, "values", mel)
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = torch.sigmoid(model(torch.as_tensor(mel, dtype=dtype)[None]))[0]
    return out.double().numpy()


def _batch(examples, idx, crop, factor, rng, dtype=torch.float32):
    n_mels = examples[0][0].shape[1]
    n_bins = examples[0][1].shape[1]
    mel = torch.zeros(len(idx), crop, n_mels, dtype=dtype)
    mag = torch.zeros(len(idx), crop * factor, n_bins, dtype=dtype)
    valid = torch.zeros(len(idx), crop * factor, dtype=torch.bool)
    for b, i in enumerate(idx):
        m, s = examples[i]
        t = m.shape[0]
        off = int(rng.integers(0, t - crop + 1)) if t > crop else 0
        n = min(crop, t)
        mel[b, :n] = torch.as_tensor(m[off:off + n], dtype=dtype)
        tgt = s[off * factor:(off + n) * factor]
        mag[b, :len(tgt)] = torch.as_tensor(tgt, dtype=dtype)
        valid[b, :len(tgt)] = True
    return mel, mag, valid


def train_ssrn(examples: Sequence, config: SsrnConfig, mel_stats: LogMinMax, mag_stats: LogMinMax,
               steps: int, batch_size: int = 16, crop: int = 16,
               optim: TtsOptimConfig = TtsOptimConfig(), seed: int = 0,
               log_path=None, checkpoint_path=None, checkpoint_every: int = 1000) -> Ssrn:
    """``examples`` are (coarse_mel [T, n_mels], magnitude [T * factor, n_bins]) pairs,
    both normalised. Optimises l1 + binary divergence."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    ssrn = Ssrn(config, mel_stats, mag_stats)
    model = ssrn.model
    model.train()
    opt = optim.make(model.parameters())
    monitor = DivergenceMonitor()
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    t0 = time.time()
    try:
        for step in range(1, steps + 1):
            idx = rng.choice(len(examples), size=min(batch_size, len(examples)), replace=False)
            mel, mag, valid = _batch(examples, idx, crop, config.upsample, rng)
            l1, d_bd = tts_loss(model(mel), mag, valid)
            loss = l1 + d_bd
            rec = {"step": step, "l1": l1.item(), "d_bd": d_bd.item(), "loss": loss.item()}
            ssrn.history.append(rec)
            if log:
                log.write(json.dumps(rec) + "\n")
            monitor.check(step, rec["loss"])
            opt.zero_grad()
            loss.backward()
            opt.step()
            if step % 100 == 0:
                logger.info("ssrn step %d loss %.4f (%.1fs)", step, rec["loss"], time.time() - t0)
            if checkpoint_path and step % checkpoint_every == 0:
                ssrn.step, ssrn.optimizer_state = step, opt.state_dict()
                ssrn.save(checkpoint_path)
    finally:
        if log:
            log.close()
    ssrn.step = steps
    ssrn.optimizer_state = opt.state_dict()
    model.eval()
    if checkpoint_path:
        ssrn.save(checkpoint_path)
    return ssrn
