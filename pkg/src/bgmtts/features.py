"""Feature extraction turning manifests into model-ready arrays."""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import dsp
from .corpus import CharVocabulary, UtteranceRecord, encode_text, load_audio
from .gsttts import TtsExample, quality_label

N_MELS = 80


def analyze(w: dsp.Waveform, params: dsp.StftParams = dsp.StftParams(), n_mels: int = N_MELS):
    """Raw linear magnitude [F, bins] and mel [F, n_mels]."""
    mag = dsp.magnitude(dsp.stft(w, params))
    return mag.values, dsp.mel_project(mag, n_mels).values


def pad_frames(a: np.ndarray, factor: int) -> np.ndarray:
    """Append zero frames so the frame count is a multiple of ``factor``."""
    extra = (-a.shape[0]) % factor
    return np.pad(a, ((0, extra), (0, 0))) if extra else a


def fit_stats(waveforms: Iterable[dsp.Waveform], params: dsp.StftParams = dsp.StftParams()):
    """Corpus statistics ``(mel_stats, mag_stats)``."""
    mags, mels = [], []
    for w in waveforms:
        mag, mel = analyze(w, params)
        mags.append(mag)
        mels.append(mel)
    return dsp.LogMinMax.fit(mels), dsp.LogMinMax.fit(mags)


def coarse_mel(w: dsp.Waveform, mel_stats: dsp.LogMinMax, factor: int = 4,
               params: dsp.StftParams = dsp.StftParams()) -> np.ndarray:
    _, mel = analyze(w, params)
    return mel_stats.normalize(mel)[::factor].astype(np.float32)


def tts_examples(records: Sequence[UtteranceRecord], vocab: CharVocabulary, mel_stats: dsp.LogMinMax,
                 factor: int = 4, params: dsp.StftParams = dsp.StftParams()) -> list[TtsExample]:
    out = []
    for r in records:
        out.append(TtsExample(
            id=r.id,
            text=np.asarray(encode_text(r.transcript, vocab), dtype=np.int64),
            mel=coarse_mel(load_audio(r), mel_stats, factor, params),
            label=quality_label(r.quality),
            quality=r.quality.value))
    return out


def ssrn_examples(waveforms: Iterable[dsp.Waveform], mel_stats: dsp.LogMinMax, mag_stats: dsp.LogMinMax,
                  factor: int = 4, params: dsp.StftParams = dsp.StftParams()):
    """(coarse normalised mel, normalised magnitude padded to ``factor`` x coarse frames)."""
    out = []
    for w in waveforms:
        mag, mel = analyze(w, params)
        mel_n = pad_frames(mel_stats.normalize(mel), factor)
        mag_n = pad_frames(mag_stats.normalize(mag), factor)
        out.append((mel_n[::factor].astype(np.float32), mag_n.astype(np.float32)))
    return out
