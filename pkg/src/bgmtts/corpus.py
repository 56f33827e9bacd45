"""Manifests, text encoding, and construction of the clean / noisy / filtered
corpora together with their train/test partition."""
from __future__ import annotations

import json
import math
import os
import unicodedata
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import dsp, toy
from .errors import DataError


class QualityLabel(str, Enum):
    CLEAN = "CLEAN"
    NOISY = "NOISY"
    FILTERED = "FILTERED"


class Split(str, Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


MANIFEST_FIELDS = ("id", "audio_path", "transcript", "quality", "snr_db", "duration_s", "split")


@dataclass(frozen=True)
class UtteranceRecord:
    id: str
    audio_path: str
    transcript: str
    quality: QualityLabel
    snr_db: Optional[float]
    duration_s: float
    split: Split = Split.TRAIN

    def __post_init__(self):
        object.__setattr__(self, "quality", QualityLabel(self.quality))
        object.__setattr__(self, "split", Split(self.split))
        if (self.snr_db is None) != (self.quality is QualityLabel.CLEAN):
            raise ValueError(f"{self.id}: snr_db must be present iff quality is not CLEAN")
        if not self.duration_s > 0:
            raise ValueError(f"{self.id}: duration_s must be positive")


# --------------------------------------------------------------------------
# manifest I/O
# --------------------------------------------------------------------------


def _record_line(r: UtteranceRecord, base: Path) -> str:
    path = Path(r.audio_path)
    rel = os.path.relpath(path, base) if path.is_absolute() else str(path)
    obj = {
        "id": r.id,
        "audio_path": Path(rel).as_posix(),
        "transcript": r.transcript,
        "quality": r.quality.value,
        "snr_db": r.snr_db,
        "duration_s": r.duration_s,
        "split": r.split.value,
    }
    return json.dumps(obj, ensure_ascii=False)


def write_manifest(path, records: Iterable[UtteranceRecord]) -> Path:
    """Write JSON Lines; absolute audio paths are stored relative to the manifest."""
    path = Path(path).absolute()
    path.parent.mkdir(parents=True, exist_ok=True)
    records = list(records)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate ids in manifest {path}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(_record_line(r, path.parent) + "\n")
    return path


def read_manifest(path) -> list[UtteranceRecord]:
    """Parse a manifest; audio paths come back absolute."""
    path = Path(path).absolute()
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if set(obj) != set(MANIFEST_FIELDS):
                    raise ValueError(f"fields {sorted(obj)} != {sorted(MANIFEST_FIELDS)}")
                obj["audio_path"] = str(path.parent / obj["audio_path"])
                out.append(UtteranceRecord(**obj))
            except (ValueError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    ids = [r.id for r in out]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate ids in manifest {path}")
    return out


def load_audio(r: UtteranceRecord) -> dsp.Waveform:
    return dsp.read_wav(r.audio_path)


# --------------------------------------------------------------------------
# text
# --------------------------------------------------------------------------

PAD = "<pad>"
EOS = "<eos>"


def normalize_text(s: str) -> str:
    s = unicodedata.normalize("NFC", s).lower()
    return " ".join(s.split())


@dataclass(frozen=True)
class CharVocabulary:
    symbols: tuple

    def __post_init__(self):
        if len(self.symbols) < 2 or self.symbols[0] != PAD or self.symbols[1] != EOS:
            raise ValueError("vocabulary must start with the padding and end-of-sequence symbols")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "CharVocabulary":
        chars = sorted({c for t in texts for c in normalize_text(t)})
        return cls((PAD, EOS, *chars))

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    def __len__(self) -> int:
        return len(self.symbols)

    def index(self, symbol: str) -> int:
        return self._index[symbol]

    def to_list(self) -> list:
        return list(self.symbols)


def encode_text(s: str, v: CharVocabulary) -> list[int]:
    norm = normalize_text(s)
    bad = sorted({c for c in norm if c not in v._index or c in (PAD, EOS)})
    if bad:
        raise ValueError(f"characters not in vocabulary: {bad!r}")
    return [v.index(c) for c in norm] + [v.eos_id]


def decode_text(ids: Sequence[int], v: CharVocabulary) -> str:
    out = []
    for i in ids:
        if i == v.eos_id:
            break
        if i != v.pad_id:
            out.append(v.symbols[i])
    return "".join(out)


# --------------------------------------------------------------------------
# corpus construction
# --------------------------------------------------------------------------


def make_toy_corpus(out_dir, n_utts: int, seed: int, speaker: Optional[toy.ToySpeaker] = None,
                    prefix: str = "utt", n_speakers: int = 1) -> Path:
    """Render a toy clean corpus into ``out_dir`` and return its manifest path.

    With ``speaker=None`` and ``n_speakers > 1`` utterances cycle through
    randomly drawn speakers (used for the speaker-independent filter corpus).
    """
    out_dir = Path(out_dir).absolute()
    rng = np.random.default_rng(seed)
    if speaker is not None:
        speakers = [speaker]
    elif n_speakers <= 1:
        speakers = [toy.ToySpeaker()]
    else:
        speakers = [toy.random_speaker(rng) for _ in range(n_speakers)]
    records = []
    for i in range(n_utts):
        text = toy.random_transcript(rng)
        w = toy.synth_speech(text, speakers[i % len(speakers)], seed=int(rng.integers(2 ** 31)),
                             tempo=float(rng.uniform(0.95, 1.05)))
        uid = f"{prefix}_{i:05d}"
        wav = out_dir / "wav" / f"{uid}.wav"
        dsp.write_wav(wav, w)
        records.append(UtteranceRecord(uid, str(wav), text, QualityLabel.CLEAN, None,
                                       round(w.duration, 6), Split.TRAIN))
    return write_manifest(out_dir / "manifest.jsonl", records)


def make_toy_music(out_dir, n_files: int, seed: int, duration: float = 6.0) -> Path:
    out_dir = Path(out_dir).absolute()
    for i in range(n_files):
        dsp.write_wav(out_dir / f"music_{i:03d}.wav", toy.synth_music(seed * 1000 + i, duration))
    return out_dir


def list_music(music_dir) -> list[Path]:
    music_dir = Path(music_dir)
    files = sorted(music_dir.glob("*.wav")) if music_dir.is_dir() else []
    if not files:
        raise DataError(f"no .wav music files in {music_dir}")
    return files


def _mix_one(job):
    rec, music_path, snr, mix_seed, out_path, quality = job
    speech = dsp.read_wav(rec.audio_path)
    music = dsp.read_wav(music_path)
    mixture, scaled = dsp.mix_at_snr(speech, music, snr, mix_seed)
    peak = float(np.abs(mixture.samples).max())
    if peak > 0.99:
        # scaling both components keeps their ratio
        mixture = dsp.Waveform(mixture.samples * (0.99 / peak), mixture.sample_rate)
    dsp.write_wav(out_path, mixture)
    return replace(rec, audio_path=str(out_path), quality=quality,
                   snr_db=round(dsp.measure_snr(speech, scaled), 6))


def build_mixed_corpus(clean_manifest, music_dir, out_dir, snr_range=(0.0, 20.0), seed: int = 0,
                       workers: int = 1, fixed_snr: Optional[float] = None) -> Path:
    """Mix every clean utterance with a randomly chosen music file at a random
    SNR drawn uniformly from ``snr_range``. Returns the noisy manifest path."""
    lo, hi = snr_range
    if lo > hi:
        raise ValueError(f"snr range lower bound {lo} exceeds upper bound {hi}")
    clean = read_manifest(clean_manifest)
    music = list_music(music_dir)
    out_dir = Path(out_dir).absolute()
    rng = np.random.default_rng(seed)
    jobs = []
    for rec in clean:
        snr = float(rng.uniform(lo, hi)) if fixed_snr is None else float(fixed_snr)
        m = music[int(rng.integers(len(music)))]
        mix_seed = int(rng.integers(2 ** 31))
        jobs.append((rec, m, snr, mix_seed, out_dir / "wav" / f"{rec.id}.wav", QualityLabel.NOISY))
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            records = list(ex.map(_mix_one, jobs))
    else:
        records = [_mix_one(j) for j in jobs]
    return write_manifest(out_dir / "manifest.jsonl", records)


def split_by_clean_hours(clean: Sequence[UtteranceRecord], degraded: Sequence[UtteranceRecord],
                         clean_hours: float, total_hours: float, seed: int,
                         test_fraction: float = 0.01) -> list[UtteranceRecord]:
    """Partition a clean/degraded pair of manifests into a TTS training manifest.

    ``total_hours`` of utterances are drawn (seeded); ``test_fraction`` of them
    are held out as TEST (clean rendition); of the rest, the first
    ``clean_hours`` worth keep the clean audio, the remainder take the degraded
    (noisy or filtered) audio.
    """
    if not 0 < clean_hours < total_hours:
        raise ValueError(f"need 0 < clean_hours < total_hours, got {clean_hours}, {total_hours}")
    deg = {r.id: r for r in degraded}
    missing = [r.id for r in clean if r.id not in deg]
    if missing:
        raise DataError(f"{len(missing)} clean utterances have no degraded counterpart, e.g. {missing[0]}")
    pool = sorted(clean, key=lambda r: r.id)
    order = np.random.default_rng(seed).permutation(len(pool))
    total_s = total_hours * 3600
    chosen, acc = [], 0.0
    for i in order:
        if acc >= total_s:
            break
        chosen.append(pool[i])
        acc += pool[i].duration_s
    longest = max((r.duration_s for r in pool), default=0.0)
    if acc < total_s - longest:
        raise DataError(f"insufficient data: {acc / 3600:.4f} h available, {total_hours} h requested")
    n_test = max(1, int(round(test_fraction * len(chosen))))
    test, train = chosen[:n_test], chosen[n_test:]
    out = [replace(r, split=Split.TEST) for r in test]
    target, acc = clean_hours * 3600, 0.0
    for r in train:
        if acc < target:
            out.append(replace(r, quality=QualityLabel.CLEAN, snr_db=None, split=Split.TRAIN))
            acc += r.duration_s
        else:
            out.append(replace(deg[r.id], split=Split.TRAIN))
    if acc < target:
        raise DataError("insufficient data for the requested clean hours")
    return sorted(out, key=lambda r: r.id)


def filter_corpus(noisy: Sequence[UtteranceRecord], music_filter, out_dir) -> Path:
    """Run ``music_filter.infer_file`` over every noisy utterance and write the
    FILTERED manifest (same ids, transcripts and SNRs)."""
    out_dir = Path(out_dir).absolute()
    records = []
    for rec in noisy:
        w = dsp.read_wav(rec.audio_path)
        y = music_filter.infer_file(w)
        peak = float(np.abs(y.samples).max())
        if peak > 0.99:
            y = dsp.Waveform(y.samples * (0.99 / peak), y.sample_rate)
        path = out_dir / "wav" / f"{rec.id}.wav"
        dsp.write_wav(path, y)
        records.append(replace(rec, audio_path=str(path), quality=QualityLabel.FILTERED))
    return write_manifest(out_dir / "manifest.jsonl", records)


def total_hours(records: Iterable[UtteranceRecord]) -> float:
    return math.fsum(r.duration_s for r in records) / 3600
