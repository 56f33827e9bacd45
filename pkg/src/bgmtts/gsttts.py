"""Convolutional Text2Mel with a global-style-token layer and an auxiliary
quality classifier (AQC).

The reference encoder summarises a mel-spectrogram into a fixed vector; the
GST layer attends from it over a bank of learned tokens and the resulting
convex combination is the *quality embedding*. It is concatenated to the
attention context before the audio decoder, and fed to the AQC which predicts
CLEAN vs FILTERED (or NOISY). Training minimises::

    l_tts   = l1 + d_bd
    l_total = l_tts + lambda * l_aux

plus an optional guided-attention term kept outside ``l_total``.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .corpus import CharVocabulary, QualityLabel, encode_text
from .dsp import LogMinMax
from .errors import NumericalError
from .layers import Conv1d, highway_stack

logger = logging.getLogger(__name__)

KIND = "text2mel"
LOGIT_CLAMP = 15.0

_DILATIONS = [[3, 1], [3, 3], [3, 9], [3, 27]]


@dataclass
class Text2MelConfig:
    vocab_size: int = 16
    n_mels: int = 80
    char_dim: int = 64
    hidden: int = 64
    text_enc: list = field(default_factory=lambda: _DILATIONS * 2 + [[3, 1]] * 2 + [[1, 1]] * 2)
    audio_enc: list = field(default_factory=lambda: _DILATIONS * 2 + [[3, 3]] * 2)
    audio_dec: list = field(default_factory=lambda: _DILATIONS + [[3, 1]] * 2)
    dec_out_layers: int = 3
    use_gst: bool = True
    n_tokens: int = 10
    n_heads: int = 4
    quality_dim: int = 64
    ref_channels: list = field(default_factory=lambda: [32, 32, 64, 64])
    ref_gru: int = 64
    aqc_hidden: int = 256
    aqc_stop_gradient: bool = False
    downsample: int = 4
    guided_attention: bool = True
    guided_attention_weight: float = 1.0
    guided_attention_g: float = 0.2

    def __post_init__(self):
        if self.quality_dim % self.n_heads:
            raise ValueError("quality_dim must be divisible by n_heads")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "Text2MelConfig":
        return cls(**d)

    @property
    def token_dim(self) -> int:
        return self.quality_dim // self.n_heads


class QualityEmbedding(NamedTuple):
    embedding: torch.Tensor  # [B, quality_dim]
    weights: torch.Tensor  # [B, heads, tokens]


@dataclass
class LossBundle:
    l1: torch.Tensor
    d_bd: torch.Tensor
    l_tts: torch.Tensor
    l_aux: torch.Tensor
    lam: float
    l_total: torch.Tensor

    def floats(self) -> dict:
        return {"l1": self.l1.item(), "d_bd": self.d_bd.item(), "l_tts": self.l_tts.item(),
                "l_aux": self.l_aux.item(), "lambda": self.lam, "l_total": self.l_total.item()}


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------


class TextEncoder(nn.Module):
    def __init__(self, cfg: Text2MelConfig):
        super().__init__()
        d = cfg.hidden
        self.embed = nn.Embedding(cfg.vocab_size, cfg.char_dim, padding_idx=0)
        self.pre = nn.Sequential(Conv1d(cfg.char_dim, 2 * d, activation=F.relu), Conv1d(2 * d, 2 * d))
        self.hc = highway_stack(2 * d, cfg.text_enc)

    def forward(self, ids):
        x = self.embed(ids).transpose(1, 2)
        return self.hc(self.pre(x)).chunk(2, dim=1)  # keys, values: [B, d, N]


class AudioEncoder(nn.Module):
    def __init__(self, cfg: Text2MelConfig):
        super().__init__()
        d = cfg.hidden
        self.pre = nn.Sequential(
            Conv1d(cfg.n_mels, d, causal=True, activation=F.relu),
            Conv1d(d, d, causal=True, activation=F.relu),
            Conv1d(d, d, causal=True))
        self.hc = highway_stack(d, cfg.audio_enc, causal=True)

    def forward(self, s):
        return self.hc(self.pre(s))


class AudioDecoder(nn.Module):
    def __init__(self, cfg: Text2MelConfig, extra_dim: int):
        super().__init__()
        d = cfg.hidden
        self.pre = Conv1d(2 * d + extra_dim, d, causal=True)
        self.hc = highway_stack(d, cfg.audio_dec, causal=True)
        self.post = nn.Sequential(*[Conv1d(d, d, causal=True, activation=F.relu)
                                    for _ in range(cfg.dec_out_layers)])
        self.out = Conv1d(d, cfg.n_mels, causal=True)

    def forward(self, x):
        return self.out(self.post(self.hc(self.pre(x))))


class ReferenceEncoder(nn.Module):
    """Strided 2-D convs over the mel image, then a GRU; final state is the embedding."""

    def __init__(self, cfg: Text2MelConfig):
        super().__init__()
        convs = []
        c_in = 1
        for c in cfg.ref_channels:
            convs += [nn.Conv2d(c_in, c, 3, stride=2, padding=1, bias=False), nn.BatchNorm2d(c), nn.ReLU()]
            c_in = c
        self.convs = nn.Sequential(*convs)
        self.n_layers = len(cfg.ref_channels)
        freq = cfg.n_mels
        for _ in cfg.ref_channels:
            freq = (freq + 1) // 2
        self.gru = nn.GRU(c_in * freq, cfg.ref_gru, batch_first=True)
        self.n_mels = cfg.n_mels

    def forward(self, mel, lengths=None):
        """``mel`` [B, T, n_mels] -> [B, ref_gru]."""
        if mel.shape[1] == 0:
            raise ValueError("reference has zero frames")
        if mel.shape[2] != self.n_mels:
            raise ValueError(f"reference has {mel.shape[2]} mel bins, expected {self.n_mels}")
        x = mel.unsqueeze(1)
        if lengths is None:
            x = self.convs(x)  # B C T' F'
        else:
            # zero everything past each item's length after every block, so
            # padding never reaches the valid frames through the strided convs
            out_len = torch.as_tensor(lengths, dtype=torch.long).clone()
            x = x * self._time_mask(out_len, x)
            for i in range(0, len(self.convs), 3):
                x = self.convs[i + 2](self.convs[i + 1](self.convs[i](x)))
                out_len = (out_len + 1) // 2
                x = x * self._time_mask(out_len, x)
        b, c, t, f = x.shape
        x = x.permute(0, 2, 1, 3).reshape(b, t, c * f)
        if lengths is None:
            _, h = self.gru(x)
        else:
            packed = nn.utils.rnn.pack_padded_sequence(x, out_len.clamp(1, t).cpu(), batch_first=True,
                                                       enforce_sorted=False)
            _, h = self.gru(packed)
        return h[-1]

    @staticmethod
    def _time_mask(lengths, x):
        return (torch.arange(x.shape[2])[None, :] < lengths[:, None]).to(x.dtype)[:, None, :, None]


class StyleTokenLayer(nn.Module):
    """Multi-head attention from the reference embedding over tanh(tokens)."""

    def __init__(self, cfg: Text2MelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.tokens = nn.Parameter(torch.randn(cfg.n_tokens, cfg.token_dim) * 0.5)
        self.query = nn.Linear(cfg.ref_gru, cfg.quality_dim, bias=False)
        self.key = nn.Linear(cfg.token_dim, cfg.quality_dim, bias=False)
        self.value = nn.Linear(cfg.token_dim, cfg.quality_dim, bias=False)

    def _heads(self, x):
        # [..., dim] -> [..., heads, dim/heads]
        return x.reshape(*x.shape[:-1], self.n_heads, -1)

    def token_values(self) -> torch.Tensor:
        """[heads, tokens, head_dim] projected token values."""
        return self._heads(self.value(torch.tanh(self.tokens))).transpose(0, 1)

    def forward(self, ref: torch.Tensor) -> QualityEmbedding:
        q = self._heads(self.query(ref))  # B H dh
        k = self._heads(self.key(torch.tanh(self.tokens))).transpose(0, 1)  # H N dh
        scores = torch.einsum("bhd,hnd->bhn", q, k) / math.sqrt(q.shape[-1])
        weights = torch.softmax(scores, dim=-1)
        return QualityEmbedding(self.combine(weights), weights)

    def combine(self, weights: torch.Tensor) -> torch.Tensor:
        """Per-head convex combination of token values, heads concatenated."""
        out = torch.einsum("bhn,hnd->bhd", weights, self.token_values())
        return out.reshape(out.shape[0], -1)


class QualityClassifier(nn.Module):
    def __init__(self, cfg: Text2MelConfig):
        super().__init__()
        self.hidden = nn.Linear(cfg.quality_dim, cfg.aqc_hidden)
        self.out = nn.Linear(cfg.aqc_hidden, 2)

    def forward(self, q):
        return self.out(F.relu(self.hidden(q)))


class Text2MelNet(nn.Module):
    def __init__(self, cfg: Text2MelConfig):
        super().__init__()
        self.cfg = cfg
        self.text_encoder = TextEncoder(cfg)
        self.audio_encoder = AudioEncoder(cfg)
        self.audio_decoder = AudioDecoder(cfg, cfg.quality_dim if cfg.use_gst else 0)
        if cfg.use_gst:
            self.reference_encoder = ReferenceEncoder(cfg)
            self.gst = StyleTokenLayer(cfg)
            self.aqc = QualityClassifier(cfg)

    # individual stages ----------------------------------------------------
    def encode_text(self, ids):
        if ids.shape[-1] == 0:
            raise ValueError("empty text sequence")
        return self.text_encoder(ids)

    def encode_reference(self, mel, lengths=None):
        return self.reference_encoder(mel, lengths)

    def quality_embed(self, ref_embedding) -> QualityEmbedding:
        return self.gst(ref_embedding)

    def classify_quality(self, q):
        if self.cfg.aqc_stop_gradient:
            q = q.detach()
        return self.aqc(q)

    def attend(self, keys, queries, text_mask=None):
        """Attention matrix [B, N, T]; each frame's column is a distribution over text."""
        scores = torch.einsum("bdn,bdt->bnt", keys, queries) / math.sqrt(keys.shape[1])
        if text_mask is not None:
            scores = scores.masked_fill(~text_mask.unsqueeze(-1), float("-inf"))
        return torch.softmax(scores, dim=1)

    def decode(self, values, attention, queries, quality=None):
        """Mel logits [B, n_mels, T] from context, audio embedding and quality embedding."""
        context = torch.bmm(values, attention)  # B d T
        parts = [context, queries]
        if quality is not None:
            parts.append(quality.unsqueeze(-1).expand(-1, -1, queries.shape[-1]))
        return self.audio_decoder(torch.cat(parts, dim=1))

    # full teacher-forced pass ------------------------------------------
    def forward(self, text, mel, text_lengths=None, mel_lengths=None, reference=None, ref_lengths=None):
        """``text`` [B, N] ids, ``mel`` [B, T, n_mels] targets in [0, 1].

        The decoder input is the target shifted right by one frame; the
        reference defaults to the target itself.
        """
        keys, values = self.encode_text(text)
        s = F.pad(mel.transpose(1, 2), (1, 0))[:, :, :-1]
        queries = self.audio_encoder(s)
        text_mask = None
        if text_lengths is not None:
            text_mask = torch.arange(text.shape[1])[None, :] < torch.as_tensor(text_lengths)[:, None]
        attention = self.attend(keys, queries, text_mask)
        out = {"attention": attention}
        quality = None
        if self.cfg.use_gst:
            if reference is None:
                reference, ref_lengths = mel, mel_lengths
            qe = self.quality_embed(self.encode_reference(reference, ref_lengths))
            quality = qe.embedding
            out["quality"] = qe
            out["aqc_logits"] = self.classify_quality(quality)
        out["logits"] = self.decode(values, attention, queries, quality).transpose(1, 2)  # B T F
        return out


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def _frame_mask(lengths, t, like):
    if lengths is None:
        return None
    return (torch.arange(t)[None, :] < torch.as_tensor(lengths)[:, None]).to(like.dtype)


def tts_loss(logits: torch.Tensor, target: torch.Tensor, valid: Optional[torch.Tensor] = None):
    """``(l1, d_bd)`` between ``sigmoid(logits)`` and ``target`` in [0, 1].

    Binary divergence is evaluated from clamped logits. ``valid`` is a
    [B, T] frame mask for padded batches ([T, F] inputs need none).
    """
    if logits.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(logits.shape)} vs {tuple(target.shape)}")
    if bool((target < 0).any()) or bool((target > 1).any()):
        raise ValueError("targets must lie in [0, 1]")
    z = logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    l1 = (torch.sigmoid(z) - target).abs()
    bd = F.binary_cross_entropy_with_logits(z, target, reduction="none")
    if valid is None:
        return l1.mean(), bd.mean()
    w = valid.unsqueeze(-1).to(l1.dtype)
    denom = w.sum() * l1.shape[-1]
    return (l1 * w).sum() / denom, (bd * w).sum() / denom


def aux_loss(aqc_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy of the 2-way softmax against 0 (clean) / 1 (degraded)."""
    return F.cross_entropy(aqc_logits, labels)


def guided_attention_weights(n: int, t: int, g: float = 0.2, dtype=torch.float32) -> torch.Tensor:
    nn_ = torch.arange(n, dtype=dtype)[:, None] / max(n, 1)
    tt = torch.arange(t, dtype=dtype)[None, :] / max(t, 1)
    return 1 - torch.exp(-((nn_ - tt) ** 2) / (2 * g * g))


def guided_attention_loss(attention, text_lengths, mel_lengths, g: float = 0.2) -> torch.Tensor:
    """Mean of ``A * W`` over the valid region, penalising off-diagonal attention."""
    b, n, t = attention.shape
    w = torch.zeros_like(attention)
    m = torch.zeros_like(attention)
    for i in range(b):
        ni, ti = int(text_lengths[i]), int(mel_lengths[i])
        w[i, :ni, :ti] = guided_attention_weights(ni, ti, g, attention.dtype)
        m[i, :ni, :ti] = 1
    return (attention * w * m).sum() / m.sum()


def total_loss(l1, d_bd, l_aux, lam: float) -> LossBundle:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    l_tts = l1 + d_bd
    l_total = l_tts + lam * l_aux
    return LossBundle(l1, d_bd, l_tts, l_aux, lam, l_total)


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------


@dataclass
class TtsExample:
    id: str
    text: np.ndarray  # int64 ids incl. EOS
    mel: np.ndarray  # [T, n_mels] normalised coarse mel
    label: int  # 0 clean, 1 degraded
    quality: str = "CLEAN"


def quality_label(q) -> int:
    return 0 if QualityLabel(q) is QualityLabel.CLEAN else 1


def collate(examples: Sequence[TtsExample], dtype=torch.float32):
    b = len(examples)
    n = max(len(e.text) for e in examples)
    t = max(len(e.mel) for e in examples)
    text = torch.zeros(b, n, dtype=torch.long)
    mel = torch.zeros(b, t, examples[0].mel.shape[1], dtype=dtype)
    for i, e in enumerate(examples):
        text[i, :len(e.text)] = torch.as_tensor(e.text)
        mel[i, :len(e.mel)] = torch.as_tensor(e.mel, dtype=dtype)
    text_len = torch.tensor([len(e.text) for e in examples])
    mel_len = torch.tensor([len(e.mel) for e in examples])
    labels = torch.tensor([e.label for e in examples])
    return text, mel, text_len, mel_len, labels


def compute_losses(model: Text2MelNet, batch, lam: float):
    """Forward a collated batch; returns ``(bundle, guided_attention, outputs)``."""
    text, mel, text_len, mel_len, labels = batch
    out = model(text, mel, text_len, mel_len)
    valid = _frame_mask(mel_len, mel.shape[1], mel)
    l1, d_bd = tts_loss(out["logits"], mel, valid)
    if model.cfg.use_gst:
        l_aux = aux_loss(out["aqc_logits"], labels)
    else:
        l_aux = torch.zeros((), dtype=mel.dtype)
    bundle = total_loss(l1, d_bd, l_aux, lam)
    ga = guided_attention_loss(out["attention"], text_len, mel_len, model.cfg.guided_attention_g)
    return bundle, ga, out


# --------------------------------------------------------------------------
# training / synthesis
# --------------------------------------------------------------------------


@dataclass
class TtsOptimConfig:
    lr: float = 1e-3
    betas: tuple = (0.5, 0.9)
    eps: float = 1e-6
    grad_clip: Optional[float] = None

    def make(self, params):
        return torch.optim.Adam(params, lr=self.lr, betas=tuple(self.betas), eps=self.eps)


class DivergenceMonitor:
    """Flags NaN/Inf loss, or loss above ``factor`` times its value at ``ref_step``."""

    def __init__(self, ref_step: int = 100, factor: float = 100.0):
        self.ref_step = ref_step
        self.factor = factor
        self.ref_value = None

    def check(self, step: int, loss: float) -> None:
        if not math.isfinite(loss):
            raise NumericalError(f"loss became {loss} at step {step}")
        if step == self.ref_step:
            self.ref_value = loss
        elif self.ref_value is not None and loss > self.factor * self.ref_value:
            raise NumericalError(f"loss {loss:.4g} at step {step} exceeds {self.factor:g}x "
                                 f"its step-{self.ref_step} value {self.ref_value:.4g}")


class Text2Mel:
    """Trained Text2Mel network bundled with its vocabulary and mel statistics."""

    def __init__(self, config: Text2MelConfig, vocab: CharVocabulary, mel_stats: LogMinMax,
                 model: Optional[Text2MelNet] = None, step: int = 0, lam: float = 0.0):
        self.config = config
        self.vocab = vocab
        self.mel_stats = mel_stats
        self.model = model if model is not None else Text2MelNet(config)
        self.step = step
        self.lam = lam
        self.optimizer_state = None
        self.history: list = []

    def save(self, path) -> Path:
        return checkpoint.save_checkpoint(
            path, KIND, self.config.to_dict(), self.step,
            {"model": self.model.state_dict(), "optimizer": self.optimizer_state},
            extra={"vocab": self.vocab.to_list(), "mel_stats": self.mel_stats.to_dict(), "lambda": self.lam})

    @classmethod
    def load(cls, path, config: Optional[Text2MelConfig] = None) -> "Text2Mel":
        header, payload = checkpoint.load_checkpoint(
            path, KIND, config.to_dict() if config is not None else None)
        cfg = Text2MelConfig.from_dict(header["config"])
        model = Text2MelNet(cfg)
        if next(iter(payload["model"].values())).dtype == torch.float64:
            model.double()
        model.load_state_dict(payload["model"])
        model.eval()
        t = cls(cfg, CharVocabulary(tuple(header["vocab"])), LogMinMax(**header["mel_stats"]),
                model, header["step"], header.get("lambda", 0.0))
        t.optimizer_state = payload.get("optimizer")
        return t

    def embed(self, mels: Sequence[np.ndarray], batch_size: int = 32) -> np.ndarray:
        """Quality embeddings for a list of normalised coarse mels."""
        if not self.config.use_gst:
            raise ValueError("model has no GST layer")
        self.model.eval()
        dtype = next(self.model.parameters()).dtype
        out = []
        with torch.no_grad():
            for i in range(0, len(mels), batch_size):
                chunk = mels[i:i + batch_size]
                t = max(len(m) for m in chunk)
                x = torch.zeros(len(chunk), t, chunk[0].shape[1], dtype=dtype)
                for j, m in enumerate(chunk):
                    x[j, :len(m)] = torch.as_tensor(m, dtype=dtype)
                lens = torch.tensor([len(m) for m in chunk])
                out.append(self.model.quality_embed(self.model.encode_reference(x, lens)).embedding.double().numpy())
        return np.concatenate(out) if out else np.zeros((0, self.config.quality_dim))

    def classify(self, mels: Sequence[np.ndarray]) -> np.ndarray:
        """AQC probability of the degraded class per reference."""
        emb = torch.as_tensor(self.embed(mels), dtype=next(self.model.parameters()).dtype)
        with torch.no_grad():
            return torch.softmax(self.model.aqc(emb), -1)[:, 1].double().numpy()


def check_labels(examples: Sequence[TtsExample]) -> None:
    qualities = {QualityLabel(e.quality) for e in examples}
    degraded = qualities - {QualityLabel.CLEAN}
    if len(degraded) > 1:
        raise ValueError(f"training set mixes {sorted(q.value for q in degraded)}; "
                         "the quality classifier is binary")


def train_tts(examples: Sequence[TtsExample], config: Text2MelConfig, vocab: CharVocabulary,
              mel_stats: LogMinMax, lam: float, steps: int, batch_size: int = 16,
              optim: TtsOptimConfig = TtsOptimConfig(), seed: int = 0, log_path=None,
              checkpoint_path=None, checkpoint_every: int = 1000,
              monitor: Optional[DivergenceMonitor] = None) -> Text2Mel:
    """Optimise ``l_total`` (+ guided attention). Every example is its own reference.

    Raises ``NumericalError`` when the divergence monitor fires.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if lam > 0 and not config.use_gst:
        raise ValueError("lambda > 0 requires the GST layer")
    check_labels(examples)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    t2m = Text2Mel(config, vocab, mel_stats, lam=lam)
    model = t2m.model
    model.train()
    opt = optim.make(model.parameters())
    monitor = monitor or DivergenceMonitor()
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    t0 = time.time()
    try:
        for step in range(1, steps + 1):
            idx = rng.choice(len(examples), size=min(batch_size, len(examples)), replace=False)
            batch = collate([examples[i] for i in idx])
            bundle, ga, out = compute_losses(model, batch, lam)
            objective = bundle.l_total
            if config.guided_attention:
                objective = objective + config.guided_attention_weight * ga
            loss_value = objective.item()
            rec = {"step": step, **{k: bundle.floats()[k] for k in ("l1", "d_bd", "l_aux", "l_total")}}
            if config.use_gst:
                acc = (out["aqc_logits"].argmax(-1) == batch[4]).double().mean().item()
            else:
                acc = float("nan")
            rec["aqc_accuracy"] = acc
            rec["l_att"] = ga.item()
            t2m.history.append(rec)
            if log:
                log.write(json.dumps(rec) + "\n")
            monitor.check(step, loss_value)
            opt.zero_grad()
            objective.backward()
            if optim.grad_clip:
                nn.utils.clip_grad_norm_(model.parameters(), optim.grad_clip)
            opt.step()
            if step % 100 == 0:
                logger.info("tts step %d l_total %.4f att %.4f acc %.3f (%.1fs)", step, rec["l_total"],
                            rec["l_att"], acc, time.time() - t0)
            if checkpoint_path and step % checkpoint_every == 0:
                t2m.step, t2m.optimizer_state = step, opt.state_dict()
                t2m.save(checkpoint_path)
    finally:
        if log:
            log.close()
    t2m.step = steps
    t2m.optimizer_state = opt.state_dict()
    model.eval()
    if checkpoint_path:
        t2m.save(checkpoint_path)
    return t2m


@dataclass
class SynthesisResult:
    mel: np.ndarray  # [T, n_mels] normalised coarse mel
    attention: np.ndarray  # [N, T]
    completed: bool
    quality: np.ndarray


def synthesize(t2m: Text2Mel, text: str, reference: np.ndarray, max_frames: int = 200,
               monotonic: bool = True) -> SynthesisResult:
    """Autoregressive generation conditioned on a (clean) reference mel.

    Stops when attention reaches the end-of-sequence symbol; otherwise returns
    ``max_frames`` frames with ``completed=False``. With ``monotonic`` the
    attention peak may move at most one position back or three forward per
    frame, else it is forced one step ahead.
    """
    model = t2m.model
    model.eval()
    dtype = next(model.parameters()).dtype
    ids = torch.as_tensor(encode_text(text, t2m.vocab))[None]
    n = ids.shape[1]
    with torch.no_grad():
        keys, values = model.encode_text(ids)
        quality = None
        q_np = np.zeros(0)
        if model.cfg.use_gst:
            ref = torch.as_tensor(reference, dtype=dtype)[None]
            quality = model.quality_embed(model.encode_reference(ref)).embedding
            q_np = quality[0].double().numpy()
        s = torch.zeros(1, model.cfg.n_mels, 1, dtype=dtype)
        columns = []
        frames = []
        prev = 0
        completed = False
        for t in range(max_frames):
            queries = model.audio_encoder(s)
            att = model.attend(keys, queries[:, :, -1:])  # current column only
            col = att[0, :, 0]
            pos = int(col.argmax())
            if monotonic and t > 0 and not (prev - 1 <= pos <= prev + 3):
                pos = min(prev + 1, n - 1)
                col = F.one_hot(torch.tensor(pos), n).to(dtype)
            prev = pos
            columns.append(col)
            a = torch.stack(columns, dim=-1)[None]
            logits = model.decode(values, a, queries, quality)
            frame = torch.sigmoid(logits[:, :, -1:])
            frames.append(frame[0, :, 0])
            s = torch.cat([s, frame], dim=-1)
            if pos >= n - 1:
                completed = True
                break
    if not completed:
        logger.warning("synthesis of %r did not reach the end of the text in %d frames", text, max_frames)
    mel = torch.stack(frames).double().numpy()
    attn = torch.stack(columns, dim=-1).double().numpy()
    return SynthesisResult(mel, attn, completed, q_np)
