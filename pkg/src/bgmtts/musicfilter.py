"""Mask-predicting music filter.

A dilated 2-D CNN over the noisy magnitude spectrogram, a bidirectional LSTM
and a fully-connected head ending in a sigmoid. Trained on (noisy, clean)
pairs to minimise the MSE between the masked noisy magnitude and the clean
magnitude; no speaker embedding is involved.
"""
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

from . import checkpoint, dsp
from .errors import NumericalError

logger = logging.getLogger(__name__)

KIND = "musicfilter"


@dataclass
class MusicFilterConfig:
    n_bins: int = 513
    conv_channels: int = 64
    conv_kernels: list = field(default_factory=lambda: [[1, 7], [7, 1], [5, 5], [5, 5], [5, 5], [5, 5]])
    conv_dilations: list = field(default_factory=lambda: [[1, 1], [1, 1], [1, 1], [2, 1], [4, 1], [8, 1]])
    conv_out_channels: int = 8
    lstm_width: int = 256
    fc_width: int = 512
    batch_norm: bool = True

    def __post_init__(self):
        if len(self.conv_kernels) != len(self.conv_dilations):
            raise ValueError("conv_kernels and conv_dilations must have equal length")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "MusicFilterConfig":
        return cls(**d)

    @classmethod
    def toy(cls) -> "MusicFilterConfig":
        """CPU-friendly preset used by the toy experiments."""
        return cls(conv_channels=8, conv_out_channels=2, lstm_width=64, fc_width=128,
                   conv_kernels=[[1, 7], [7, 1], [3, 3], [3, 3], [3, 3], [3, 3]],
                   conv_dilations=[[1, 1], [1, 1], [1, 1], [2, 1], [4, 1], [8, 1]])


@dataclass
class AdamConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def make(self, params):
        return torch.optim.Adam(params, lr=self.lr, betas=tuple(self.betas), eps=self.eps)


def _input_features(mag: torch.Tensor) -> torch.Tensor:
    # dB, roughly scaled into [0, 1]
    return (20 * torch.log10(mag.clamp_min(1e-5)) + 100.0) / 100.0


class MusicFilterNet(nn.Module):
    def __init__(self, cfg: MusicFilterConfig):
        super().__init__()
        self.cfg = cfg
        layers = []
        c_in = 1
        for k, d in zip(cfg.conv_kernels, cfg.conv_dilations):
            pad = ((k[0] - 1) * d[0] // 2, (k[1] - 1) * d[1] // 2)
            layers.append(nn.Conv2d(c_in, cfg.conv_channels, tuple(k), dilation=tuple(d), padding=pad,
                                    bias=not cfg.batch_norm))
            if cfg.batch_norm:
                layers.append(nn.BatchNorm2d(cfg.conv_channels))
            layers.append(nn.ReLU())
            c_in = cfg.conv_channels
        layers.append(nn.Conv2d(c_in, cfg.conv_out_channels, 1, bias=not cfg.batch_norm))
        if cfg.batch_norm:
            layers.append(nn.BatchNorm2d(cfg.conv_out_channels))
        layers.append(nn.ReLU())
        self.conv = nn.Sequential(*layers)
        self.lstm = nn.LSTM(cfg.conv_out_channels * cfg.n_bins, cfg.lstm_width,
                            batch_first=True, bidirectional=True)
        self.fc1 = nn.Linear(2 * cfg.lstm_width, cfg.fc_width)
        self.fc2 = nn.Linear(cfg.fc_width, cfg.n_bins)
        nn.init.zeros_(self.fc2.bias)

    def forward(self, mag: torch.Tensor) -> torch.Tensor:
        """``mag`` [B, T, F] linear magnitude -> mask [B, T, F] in (0, 1)."""
        if mag.shape[-1] != self.cfg.n_bins:
            raise ValueError(f"expected {self.cfg.n_bins} bins, got {mag.shape[-1]}")
        x = self.conv(_input_features(mag).unsqueeze(1))  # B C T F
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        x, _ = self.lstm(x)
        x = F.relu(x)
        x = F.relu(self.fc1(x))
        return torch.sigmoid(self.fc2(x))


def filter_loss(noisy: torch.Tensor, clean: torch.Tensor, model: nn.Module,
                valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean over bins of ``(mask * noisy - clean)^2``; ``valid`` [B, T] drops padded frames."""
    if noisy.shape != clean.shape:
        raise ValueError(f"shape mismatch {tuple(noisy.shape)} vs {tuple(clean.shape)}")
    err = (model(noisy) * noisy - clean) ** 2
    if valid is None:
        return err.mean()
    w = valid.to(err.dtype).unsqueeze(-1)
    return (err * w).sum() / (w.sum() * err.shape[-1]).clamp_min(1.0)


class MusicFilter:
    """A trained (or freshly initialised) filter plus its bookkeeping."""

    def __init__(self, config: MusicFilterConfig, model: Optional[MusicFilterNet] = None,
                 step: int = 0, params: dsp.StftParams = dsp.StftParams()):
        self.config = config
        self.model = model if model is not None else MusicFilterNet(config)
        self.step = step
        self.params = params
        self.optimizer_state = None

    def predict_mask(self, noisy: dsp.MagnitudeSpectrogram) -> dsp.Mask:
        return predict_mask(noisy, self.model)

    def infer_file(self, noisy: dsp.Waveform) -> dsp.Waveform:
        return infer_file(noisy, self)

    def save(self, path) -> Path:
        p = self.params
        return checkpoint.save_checkpoint(
            path, KIND, self.config.to_dict(), self.step,
            {"model": self.model.state_dict(), "optimizer": self.optimizer_state},
            extra={"stft": asdict(p)})

    @classmethod
    def load(cls, path, config: Optional[MusicFilterConfig] = None) -> "MusicFilter":
        header, payload = checkpoint.load_checkpoint(
            path, KIND, config.to_dict() if config is not None else None)
        cfg = MusicFilterConfig.from_dict(header["config"])
        model = MusicFilterNet(cfg)
        model.load_state_dict(payload["model"])
        if next(iter(payload["model"].values())).dtype == torch.float64:
            model.double()
        model.eval()
        f = cls(cfg, model, header["step"], dsp.StftParams(**header["stft"]))
        f.optimizer_state = payload.get("optimizer")
        return f


def predict_mask(noisy: dsp.MagnitudeSpectrogram, model: nn.Module) -> dsp.Mask:
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        m = model(torch.as_tensor(noisy.values, dtype=dtype).unsqueeze(0))[0]
    model.train(was_training)
    return dsp.Mask(m.double().numpy())


def infer_file(noisy: dsp.Waveform, music_filter) -> dsp.Waveform:
    """STFT -> mask -> masked magnitude recombined with the noisy phase -> ISTFT."""
    if noisy.sample_rate != dsp.SAMPLE_RATE:
        raise ValueError(f"expected {dsp.SAMPLE_RATE} Hz audio, got {noisy.sample_rate} Hz")
    spec = dsp.stft(noisy, music_filter.params)
    mag = dsp.magnitude(spec)
    mask = music_filter.predict_mask(mag)
    out = dsp.combine(dsp.apply_mask(mag, mask), dsp.phase(spec))
    return dsp.istft(out, length=len(noisy))


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def spectrogram_pairs(pairs: Sequence, params: dsp.StftParams = dsp.StftParams()):
    """(noisy, clean) waveforms -> list of (noisy_mag, clean_mag) float32 arrays."""
    out = []
    for noisy, clean in pairs:
        if len(noisy) != len(clean):
            raise ValueError("noisy and clean waveforms differ in length")
        out.append((dsp.magnitude(dsp.stft(noisy, params)).values.astype(np.float32),
                    dsp.magnitude(dsp.stft(clean, params)).values.astype(np.float32)))
    return out


def make_batch(specs, idx, crop: int, rng: np.random.Generator):
    """Random crops of ``crop`` frames; shorter items are zero padded and masked."""
    n_bins = specs[0][0].shape[1]
    noisy = np.zeros((len(idx), crop, n_bins), np.float32)
    clean = np.zeros_like(noisy)
    valid = np.zeros((len(idx), crop), bool)
    for b, i in enumerate(idx):
        nz, cl = specs[i]
        t = nz.shape[0]
        off = int(rng.integers(0, t - crop + 1)) if t > crop else 0
        n = min(crop, t)
        noisy[b, :n] = nz[off:off + n]
        clean[b, :n] = cl[off:off + n]
        valid[b, :n] = True
    return torch.from_numpy(noisy), torch.from_numpy(clean), torch.from_numpy(valid)


def train_filter(pairs: Sequence, config: MusicFilterConfig = MusicFilterConfig(),
                 optim: AdamConfig = AdamConfig(), steps: int = 1000, batch_size: int = 8,
                 crop_frames: int = 64, seed: int = 0, checkpoint_path=None,
                 checkpoint_every: int = 500, log_path=None,
                 params: dsp.StftParams = dsp.StftParams()) -> MusicFilter:
    """Train on (noisy, clean) waveform pairs. Returns the trained filter;
    ``loss_history`` on the returned object holds the per-step loss."""
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    specs = spectrogram_pairs(pairs, params)
    if not specs:
        raise ValueError("no training pairs")
    filt = MusicFilter(config, params=params)
    model = filt.model
    model.train()
    opt = optim.make(model.parameters())
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    history = []
    t0 = time.time()
    try:
        for step in range(1, steps + 1):
            idx = rng.choice(len(specs), size=min(batch_size, len(specs)), replace=False)
            noisy, clean, valid = make_batch(specs, idx, crop_frames, rng)
            loss = filter_loss(noisy, clean, model, valid)
            if not torch.isfinite(loss):
                raise NumericalError(f"music filter loss became {loss.item()} at step {step}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
            if log:
                log.write(json.dumps({"step": step, "loss": history[-1]}) + "\n")
            if step % 100 == 0:
                logger.info("filter step %d loss %.5f (%.1fs)", step, np.mean(history[-100:]), time.time() - t0)
            if checkpoint_path and step % checkpoint_every == 0:
                filt.step, filt.optimizer_state = step, opt.state_dict()
                filt.save(checkpoint_path)
    finally:
        if log:
            log.close()
    filt.step = steps
    filt.optimizer_state = opt.state_dict()
    model.eval()
    if checkpoint_path:
        filt.save(checkpoint_path)
    filt.loss_history = history
    return filt
