"""Ablation orchestration: corpus construction, the five model variants,
per-cell training/evaluation and the JSON report.

A cell is one (variant, clean fraction, seed) combination. Cells share the
prepared corpora but no mutable state; a cell whose training diverges is
recorded as DIVERGED and the remaining cells run normally.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .. import corpus, dsp, features, toy
from ..corpus import CharVocabulary, QualityLabel, Split, UtteranceRecord
from ..errors import DataError, NumericalError
from ..gsttts import Text2Mel, TtsExample, collate, compute_losses, quality_label, train_tts
from ..musicfilter import MusicFilter, train_filter
from ..ssrn import Ssrn, train_ssrn
from .config import VARIANTS, PipelineConfig, TtsTrainConfig, default_lambda
from .embed import silhouette

logger = logging.getLogger(__name__)

REPORT_VERSION = 1

# What each reported number stands in for.
PROXIES = {
    "si_snr_improvement": "perceptual quality of filtered vs. music-mixed speech",
    "lsd": "spectral fidelity of filtered vs. music-mixed speech",
    "aqc_accuracy": "held-out clean/degraded classification by the quality classifier",
    "silhouette": "clean/degraded cluster separation of quality embeddings",
    "heldout_l1": "teacher-forced mel reconstruction on held-out clean speech",
}


class Status:
    OK = "OK"
    DIVERGED = "DIVERGED"
    FAILED = "FAILED"


# --------------------------------------------------------------------------
# specs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    variant: str
    clean_fraction: float
    lam: float = 0.0
    seed: int = 0
    lr_scale: float = 1.0  # >1 deliberately destabilises training
    filter_checkpoint: Optional[str] = None
    out_dir: Optional[str] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not 0 < self.clean_fraction < 1:
            raise ValueError("clean_fraction must lie in (0, 1)")
        if self.uses_filter and not self.filter_checkpoint:
            raise ValueError(f"{self.variant} needs a music-filter checkpoint")
        if self.uses_aux and not self.lam > 0:
            raise ValueError(f"{self.variant} needs lambda > 0")
        if not self.uses_aux and self.lam != 0:
            raise ValueError(f"{self.variant} has no quality classifier; lambda must be 0")

    @classmethod
    def make(cls, variant: str, clean_fraction: float, seed: int = 0, lam: Optional[float] = None,
             **kw) -> "ExperimentSpec":
        """Fill lambda from the clean-fraction table for Aux variants, 0 otherwise."""
        if lam is None:
            lam = default_lambda(clean_fraction) if "Aux" in variant else 0.0
        return cls(variant, clean_fraction, lam, seed, **kw)

    @property
    def uses_gst(self) -> bool:
        return self.variant != "TTS"

    @property
    def uses_filter(self) -> bool:
        return "MF" in self.variant

    @property
    def uses_aux(self) -> bool:
        return self.variant.endswith("Aux")

    @property
    def degraded(self) -> Optional[QualityLabel]:
        if not self.uses_gst:
            return None
        return QualityLabel.FILTERED if self.uses_filter else QualityLabel.NOISY

    @property
    def name(self) -> str:
        tag = f"{self.variant.replace('+', '_')}_c{self.clean_fraction:g}_s{self.seed}"
        return tag if self.lr_scale == 1 else f"{tag}_lr{self.lr_scale:g}"


# --------------------------------------------------------------------------
# workspace and corpus stages
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Workspace:
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "root", Path(self.root).absolute())

    music_train = property(lambda self: self.root / "music" / "train")
    music_eval = property(lambda self: self.root / "music" / "eval")
    filter_clean = property(lambda self: self.root / "filter_clean" / "manifest.jsonl")
    filter_noisy = property(lambda self: self.root / "filter_noisy" / "manifest.jsonl")
    clean = property(lambda self: self.root / "clean" / "manifest.jsonl")
    noisy = property(lambda self: self.root / "noisy" / "manifest.jsonl")
    filtered = property(lambda self: self.root / "filtered" / "manifest.jsonl")
    filter_checkpoint = property(lambda self: self.root / "filter.ckpt")
    ssrn_checkpoint = property(lambda self: self.root / "ssrn.ckpt")
    cells = property(lambda self: self.root / "cells")


def build_corpora(cfg: PipelineConfig, ws: Workspace, workers: int = 1) -> Workspace:
    """Render toy music and speech and mix them. Stages whose manifest already
    exists are skipped, so an interrupted run resumes where it stopped."""
    c = cfg.corpus
    seed = cfg.seed
    if not any(ws.music_train.glob("*.wav")):
        corpus.make_toy_music(ws.music_train, c.n_music, seed, c.music_duration)
    if not any(ws.music_eval.glob("*.wav")):
        corpus.make_toy_music(ws.music_eval, c.n_eval_music, seed + 7919, c.music_duration)
    if not ws.filter_clean.exists():
        corpus.make_toy_corpus(ws.filter_clean.parent, c.filter_utts, seed + 1, prefix="spk",
                               n_speakers=c.filter_speakers)
    if not ws.filter_noisy.exists():
        corpus.build_mixed_corpus(ws.filter_clean, ws.music_train, ws.filter_noisy.parent,
                                  (c.snr_lo, c.snr_hi), seed + 2, workers)
    if not ws.clean.exists():
        corpus.make_toy_corpus(ws.clean.parent, c.n_utts, seed + 3, speaker=toy.ToySpeaker())
    if not ws.noisy.exists():
        corpus.build_mixed_corpus(ws.clean, ws.music_train, ws.noisy.parent,
                                  (c.snr_lo, c.snr_hi), seed + 4, workers)
    return ws


def train_filter_stage(cfg: PipelineConfig, ws: Workspace, log_path=None) -> MusicFilter:
    if ws.filter_checkpoint.exists():
        return MusicFilter.load(ws.filter_checkpoint, cfg.filter.model)
    clean = {r.id: r for r in corpus.read_manifest(ws.filter_clean)}
    pairs = [(corpus.load_audio(r), corpus.load_audio(clean[r.id])) for r in corpus.read_manifest(ws.filter_noisy)]
    f = cfg.filter
    return train_filter(pairs, f.model, f.optim, f.steps, f.batch_size, f.crop_frames, seed=cfg.seed,
                        checkpoint_path=ws.filter_checkpoint, log_path=log_path)


def filter_stage(ws: Workspace, music_filter: MusicFilter) -> Path:
    if not ws.filtered.exists():
        corpus.filter_corpus(corpus.read_manifest(ws.noisy), music_filter, ws.filtered.parent)
    return ws.filtered


def held_out_ids(clean: Sequence[UtteranceRecord], seed: int, test_fraction: float) -> list[str]:
    """Ids held out for evaluation; they depend only on the seed, not on the clean fraction."""
    split = corpus.split_by_clean_hours(clean, clean, 0.5 * corpus.total_hours(clean),
                                        corpus.total_hours(clean), seed, test_fraction)
    return [r.id for r in split if r.split is Split.TEST]


def evaluate_filter(music_filter: MusicFilter, clean: Sequence[UtteranceRecord], music: Sequence[dsp.Waveform],
                    snrs: Sequence[float], seed: int = 0) -> dict:
    """Mix each held-out clean utterance with held-out music at every grid SNR
    and compare noisy vs. filtered against the clean reference."""
    out = {"seed": seed, "split": Split.TEST.value, "n_utts": len(clean), "per_snr": []}
    for snr in snrs:
        rows = []
        for i, r in enumerate(clean):
            w = corpus.load_audio(r)
            mix, _ = dsp.mix_at_snr(w, music[i % len(music)], snr, seed * 100003 + i)
            y = music_filter.infer_file(mix)
            mag = lambda x: dsp.magnitude(dsp.stft(x))  # noqa: E731
            m_clean = mag(w)
            rows.append((dsp.si_snr(w, mix), dsp.si_snr(w, y),
                         dsp.log_spectral_distance(m_clean, mag(mix)),
                         dsp.log_spectral_distance(m_clean, mag(y))))
        a = np.mean(rows, axis=0)
        out["per_snr"].append({"snr_db": float(snr), "si_snr_noisy": a[0], "si_snr_filtered": a[1],
                               "si_snr_improvement": a[1] - a[0], "lsd_noisy": a[2], "lsd_filtered": a[3]})
    return jsonable(out)


# --------------------------------------------------------------------------
# features shared by all cells
# --------------------------------------------------------------------------


@dataclass
class CellData:
    clean: list
    noisy: list
    filtered: Optional[list]
    vocab: CharVocabulary
    mel_stats: dsp.LogMinMax
    mels: dict  # (quality value, id) -> normalised coarse mel
    texts: dict  # id -> encoded ids
    test_ids: list
    test_fraction: float
    factor: int = 4

    def records(self, quality: QualityLabel) -> list:
        return {QualityLabel.CLEAN: self.clean, QualityLabel.NOISY: self.noisy,
                QualityLabel.FILTERED: self.filtered}[quality]


def prepare_cell_data(ws: Workspace, cfg: PipelineConfig) -> CellData:
    clean = corpus.read_manifest(ws.clean)
    noisy = corpus.read_manifest(ws.noisy)
    filtered = corpus.read_manifest(ws.filtered) if ws.filtered.exists() else None
    held = held_out_ids(clean, cfg.seed, cfg.corpus.test_fraction)
    held_set = set(held)
    raw = {}
    for recs in (clean, noisy, filtered or []):
        for r in recs:
            raw[(r.quality.value, r.id)] = features.analyze(corpus.load_audio(r))[1]
    stats = dsp.LogMinMax.fit(v for (q, i), v in raw.items() if i not in held_set)
    factor = cfg.tts.model.downsample
    mels = {k: stats.normalize(v)[::factor].astype(np.float32) for k, v in raw.items()}
    vocab = CharVocabulary.from_texts(r.transcript for r in clean)
    texts = {r.id: np.asarray(corpus.encode_text(r.transcript, vocab), dtype=np.int64) for r in clean}
    return CellData(clean, noisy, filtered, vocab, stats, mels, texts, held, cfg.corpus.test_fraction, factor)


def _example(data: CellData, uid: str, quality: QualityLabel) -> TtsExample:
    return TtsExample(uid, data.texts[uid], data.mels[(quality.value, uid)], quality_label(quality), quality.value)


def cell_examples(spec: ExperimentSpec, data: CellData):
    """(train, held-out clean, held-out degraded) example lists for one cell."""
    degraded = spec.degraded
    if degraded is QualityLabel.FILTERED and data.filtered is None:
        raise DataError("filtered corpus has not been built")
    hours = corpus.total_hours(data.clean)
    split = corpus.split_by_clean_hours(
        data.clean, data.records(degraded or QualityLabel.NOISY), spec.clean_fraction * hours, hours,
        spec.seed, data.test_fraction)
    train, test = [], []
    for r in split:
        if r.split is Split.TEST:
            test.append(r.id)
        elif degraded is None:
            # the plain TTS baseline sees the whole corpus clean
            train.append(_example(data, r.id, QualityLabel.CLEAN))
        else:
            train.append(_example(data, r.id, r.quality))
    held_clean = [_example(data, i, QualityLabel.CLEAN) for i in test]
    eval_quality = degraded or (QualityLabel.FILTERED if data.filtered is not None else QualityLabel.NOISY)
    held_degraded = [_example(data, i, eval_quality) for i in test]
    return train, held_clean, held_degraded


# --------------------------------------------------------------------------
# cells
# --------------------------------------------------------------------------


def jsonable(x):
    if isinstance(x, dict):
        return {k: jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _read_log(path) -> list:
    if path is None or not Path(path).exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _curve(history: list, key: str = "l_total", every: int = 10) -> list:
    return [[h["step"], h[key]] for h in history if h["step"] % every == 0 or h["step"] == 1]


def evaluate_cell(t2m: Text2Mel, held_clean: list, held_degraded: list) -> dict:
    model = t2m.model
    model.eval()
    with torch.no_grad():
        bundle, _, _ = compute_losses(model, collate(held_clean), 0.0)
    metrics = {"heldout_l1": bundle.l1.item(), "heldout_d_bd": bundle.d_bd.item(),
               "aqc_accuracy": None, "silhouette": None, "n_test": len(held_clean)}
    if t2m.config.use_gst:
        refs = [e.mel for e in held_clean] + [e.mel for e in held_degraded]
        labels = np.array([e.label for e in held_clean] + [e.label for e in held_degraded])
        emb = t2m.embed(refs)
        metrics["silhouette"] = silhouette(emb, labels)
        metrics["aqc_accuracy"] = float(np.mean((t2m.classify(refs) > 0.5) == (labels == 1)))
    return metrics


def run_cell(spec: ExperimentSpec, data: CellData, tts: TtsTrainConfig) -> dict:
    """Train and evaluate one cell. Never raises: failures become the report's status."""
    report = {"name": spec.name, "variant": spec.variant, "clean_fraction": spec.clean_fraction,
              "lambda": spec.lam, "seed": spec.seed, "lr_scale": spec.lr_scale, "split": Split.TEST.value,
              "status": Status.OK, "error": None, "steps": 0, "metrics": {
                  "heldout_l1": None, "heldout_d_bd": None, "aqc_accuracy": None, "silhouette": None,
                  "n_test": 0, "final_l_total": None},
              "loss_curve": [], "checkpoint": None, "seconds": 0.0}
    out_dir = Path(spec.out_dir) if spec.out_dir else None
    log_path = ckpt = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path, ckpt = out_dir / "train.jsonl", out_dir / "t2m.ckpt"
    t0 = time.time()
    history = []
    try:
        train, held_clean, held_degraded = cell_examples(spec, data)
        cfg = dataclasses.replace(tts.model, vocab_size=len(data.vocab), use_gst=spec.uses_gst)
        optim = dataclasses.replace(tts.optim, lr=tts.optim.lr * spec.lr_scale)
        t2m = train_tts(train, cfg, data.vocab, data.mel_stats, spec.lam, tts.steps, tts.batch_size,
                        optim, seed=spec.seed, log_path=log_path, checkpoint_path=ckpt)
        history = t2m.history
        report["metrics"].update(evaluate_cell(t2m, held_clean, held_degraded))
        report["checkpoint"] = str(ckpt) if ckpt else None
    except NumericalError as e:
        report["status"], report["error"] = Status.DIVERGED, str(e)
        history = _read_log(log_path)
    except Exception as e:  # isolation: one broken cell must not take down the grid
        report["status"], report["error"] = Status.FAILED, f"{type(e).__name__}: {e}"
        logger.error("cell %s failed:\n%s", spec.name, traceback.format_exc())
        history = _read_log(log_path)
    report["steps"] = len(history)
    if history:
        report["metrics"]["final_l_total"] = history[-1]["l_total"]
        report["loss_curve"] = _curve(history)
    report["seconds"] = time.time() - t0
    logger.info("cell %s: %s %s", spec.name, report["status"], report["metrics"])
    return jsonable(report)


def _run_cell_job(args):
    return run_cell(*args)


def run_ablation(specs: Sequence[ExperimentSpec], data: CellData, tts: TtsTrainConfig,
                 workers: int = 1) -> list:
    """Run every cell; returns their reports in ``specs`` order."""
    jobs = [(s, data, tts) for s in specs]
    if workers > 1:
        with ProcessPoolExecutor(workers, mp_context=get_context("spawn")) as ex:
            return list(ex.map(_run_cell_job, jobs))
    return [_run_cell_job(j) for j in jobs]


def ablation_grid(cfg: PipelineConfig, ws: Workspace) -> list:
    specs = []
    for seed in cfg.ablation.seeds:
        for frac in cfg.ablation.clean_fractions:
            for v in cfg.ablation.variants:
                spec = ExperimentSpec.make(v, frac, seed, lam=cfg.tts.lam if "Aux" in v else None,
                                           filter_checkpoint=str(ws.filter_checkpoint) if "MF" in v else None)
                specs.append(dataclasses.replace(spec, out_dir=str(ws.cells / spec.name)))
    return specs


# --------------------------------------------------------------------------
# SSRN stage
# --------------------------------------------------------------------------


def ssrn_waveforms(records: Sequence[UtteranceRecord], n_perturbed: int) -> list:
    """Clean audio plus speed-perturbed copies standing in for other speakers."""
    waves = [corpus.load_audio(r) for r in records]
    factors = np.linspace(0.88, 1.12, n_perturbed) if n_perturbed else []
    return waves + [toy.speed_perturb(w, float(f)) for f in factors for w in waves]


def train_ssrn_stage(cfg: PipelineConfig, ws: Workspace, data: CellData, log_path=None) -> Ssrn:
    s = cfg.ssrn
    if ws.ssrn_checkpoint.exists():
        return Ssrn.load(ws.ssrn_checkpoint, s.model)
    held = set(data.test_ids)
    waves = ssrn_waveforms([r for r in data.clean if r.id not in held], s.model.universal_speakers)
    mags = [features.analyze(w)[0] for w in waves]
    mag_stats = dsp.LogMinMax.fit(mags)
    examples = features.ssrn_examples(waves, data.mel_stats, mag_stats, s.model.upsample)
    return train_ssrn(examples, s.model, data.mel_stats, mag_stats, s.steps, s.batch_size, s.crop, s.optim,
                      seed=cfg.seed, log_path=log_path, checkpoint_path=ws.ssrn_checkpoint)


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    config: dict
    filter: Optional[dict] = None
    cells: list = field(default_factory=list)
    header: dict = field(default_factory=lambda: {"version": REPORT_VERSION, "proxies": dict(PROXIES)})

    def to_dict(self) -> dict:
        return jsonable({"header": self.header, "config": self.config, "filter": self.filter,
                          "cells": self.cells})

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n",
                        encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["config"], d.get("filter"), d.get("cells", []), d["header"])

    def cell(self, name: str) -> dict:
        for c in self.cells:
            if c["name"] == name:
                return c
        raise KeyError(name)


def run_pipeline(cfg: PipelineConfig, root, specs: Optional[Sequence[ExperimentSpec]] = None,
                 workers: int = 1, with_ssrn: bool = False) -> EvalReport:
    """Corpora → music filter → filtered corpus → ablation cells → report."""
    ws = build_corpora(cfg, Workspace(root), workers)
    mf = train_filter_stage(cfg, ws, log_path=ws.root / "filter_train.jsonl")
    filter_stage(ws, mf)
    data = prepare_cell_data(ws, cfg)
    held = [r for r in data.clean if r.id in set(data.test_ids)]
    music = [dsp.read_wav(p) for p in corpus.list_music(ws.music_eval)]
    report = EvalReport(cfg.to_dict())
    report.filter = evaluate_filter(mf, held, music, cfg.ablation.eval_snrs, cfg.seed)
    if with_ssrn:
        train_ssrn_stage(cfg, ws, data, log_path=ws.root / "ssrn_train.jsonl")
    specs = list(specs) if specs is not None else ablation_grid(cfg, ws)
    report.cells = run_ablation(specs, data, cfg.tts, workers)
    report.save(ws.root / "report.json")
    return report
