"""Seeded generators for the toy corpora: formant-synthesised "speech" whose
spectral content is a deterministic function of the text, and background
music made of sustained harmonic notes plus drum-like transients.

They exist so the whole pipeline runs without any licensed data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dsp import SAMPLE_RATE, Waveform, active_region

# phone -> (kind, (F1, F2, F3) or noise band, duration seconds)
PHONES = {
    "a": ("vowel", (730, 1090, 2440), 0.14),
    "e": ("vowel", (530, 1840, 2480), 0.14),
    "i": ("vowel", (270, 2290, 3010), 0.14),
    "o": ("vowel", (570, 840, 2410), 0.14),
    "u": ("vowel", (300, 870, 2240), 0.14),
    "m": ("nasal", (250, 1100, 2300), 0.09),
    "n": ("nasal", (250, 1650, 2600), 0.09),
    "l": ("nasal", (380, 1300, 2800), 0.09),
    "s": ("fric", (4200, 7600), 0.11),
    "f": ("fric", (1600, 6800), 0.10),
    "k": ("stop", (1800, 3600), 0.08),
    "t": ("stop", (3200, 6000), 0.07),
    " ": ("sil", None, 0.08),
}
VOWELS = "aeiou"
CONSONANTS = "mnlsfkt"
ALPHABET = "".join(PHONES)

_RAMP_S = 0.012
_EDGE_SIL_S = 0.08
_TARGET_RMS = 0.05


@dataclass(frozen=True)
class ToySpeaker:
    f0: float = 200.0
    formant_scale: float = 1.1
    breath: float = 0.02


def random_speaker(rng: np.random.Generator) -> ToySpeaker:
    return ToySpeaker(f0=float(rng.uniform(95, 240)),
                      formant_scale=float(rng.uniform(0.88, 1.18)),
                      breath=float(rng.uniform(0.0, 0.04)))


def random_transcript(rng: np.random.Generator, n_words=(1, 3), syllables=(1, 3)) -> str:
    words = []
    for _ in range(int(rng.integers(n_words[0], n_words[1] + 1))):
        w = ""
        for _ in range(int(rng.integers(syllables[0], syllables[1] + 1))):
            if rng.random() < 0.8:
                w += CONSONANTS[rng.integers(len(CONSONANTS))]
            w += VOWELS[rng.integers(len(VOWELS))]
        words.append(w)
    return " ".join(words)


def _smooth(x: np.ndarray, n: int) -> np.ndarray:
    if n < 2:
        return x
    k = np.hanning(n)
    k /= k.sum()
    return np.convolve(np.pad(x, (n // 2, n - n // 2 - 1), mode="edge"), k, mode="valid")


def synth_speech(text: str, speaker: ToySpeaker = ToySpeaker(), seed: int = 0,
                 sample_rate: int = SAMPLE_RATE, tempo: float = 1.0) -> Waveform:
    """Render ``text`` (characters from ``ALPHABET``) as a toy utterance."""
    rng = np.random.default_rng(seed)
    sr = sample_rate
    unknown = sorted(set(text) - set(PHONES))
    if unknown:
        raise ValueError(f"toy synthesiser cannot render {unknown}")
    segs = []
    t = _EDGE_SIL_S
    for ch in text:
        kind, spec, dur = PHONES[ch]
        dur = dur * tempo * float(rng.uniform(0.93, 1.07))
        segs.append((int(t * sr), int((t + dur) * sr), kind, spec))
        t += dur
    n = int((t + _EDGE_SIL_S) * sr)
    time = np.arange(n) / sr

    voicing = np.zeros(n)
    formants = np.zeros((3, n))
    noise = np.zeros(n)
    last_formants = np.array(PHONES["a"][1], dtype=float)
    # first pass to give unvoiced segments the formants of their neighbours
    seg_formants = []
    for _, _, kind, spec in segs:
        if kind in ("vowel", "nasal"):
            last_formants = np.array(spec, dtype=float) * speaker.formant_scale
        seg_formants.append(last_formants)
    for (s, e, kind, spec), fm in zip(segs, seg_formants):
        formants[:, s:e] = fm[:, None]
        if kind == "vowel":
            voicing[s:e] = 1.0
        elif kind == "nasal":
            voicing[s:e] = 0.55
        elif kind in ("fric", "stop"):
            lo, hi = spec
            hi = min(hi, 0.45 * sr)
            sos = signal.butter(4, [lo, hi], btype="bandpass", fs=sr, output="sos")
            burst = signal.sosfilt(sos, rng.standard_normal(e - s))
            if kind == "stop":
                # closure, then a short decaying burst
                env = np.zeros(e - s)
                b0 = int(0.55 * (e - s))
                env[b0:] = np.exp(-np.arange(e - s - b0) / (0.012 * sr))
                gain = 1.6
            else:
                env = np.hanning(e - s) ** 0.5
                gain = 0.9 if _is_sibilant(spec) else 0.55
            noise[s:e] += gain * burst * env
    formants[:, :segs[0][0]] = seg_formants[0][:, None]
    formants[:, segs[-1][1]:] = seg_formants[-1][:, None]
    ramp = int(_RAMP_S * sr)
    voicing = _smooth(voicing, 2 * ramp)
    formants = np.stack([_smooth(f, 4 * ramp) for f in formants])

    progress = time / time[-1]
    f0 = speaker.f0 * (1.06 - 0.14 * progress + 0.03 * np.sin(2 * np.pi * 2.7 * time + rng.uniform(0, 6.28)))
    ph = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(0.45 * sr / f0.min())
    k = np.arange(1, n_harm + 1)[:, None]
    hf = k * f0[None, :]
    bw = np.array([90.0, 120.0, 170.0])[:, None, None]
    amp = np.array([1.0, 0.6, 0.3])[:, None, None]
    env = (amp * np.exp(-0.5 * ((hf[None] - formants[:, None, :]) / bw) ** 2)).sum(0)
    env += 0.03 * (hf / 500.0 + 1.0) ** -1.2
    env *= hf < 0.45 * sr
    voiced = (env * np.sin(k * ph[None, :])).sum(0)
    voiced += speaker.breath * rng.standard_normal(n) * np.abs(voiced).max()
    x = voicing * voiced / max(np.abs(voiced).max(), 1e-9) + 0.35 * noise / max(np.abs(noise).max(), 1.0)
    return _normalize(x, sr)


def _is_sibilant(spec) -> bool:
    return spec[0] > 3000


def _normalize(x: np.ndarray, sr: int, rms: float = _TARGET_RMS) -> Waveform:
    act = active_region(x / max(np.abs(x).max(), 1e-9) * 0.5, sr)
    cur = np.sqrt(np.mean(x[act] ** 2)) if act.any() else np.sqrt(np.mean(x ** 2))
    return Waveform(x * (rms / max(cur, 1e-12)), sr)


_SCALE = np.array([0, 2, 3, 5, 7, 8, 10])  # natural minor


def _midi_hz(m):
    return 440.0 * 2 ** ((np.asarray(m) - 69) / 12)


def synth_music(seed: int, duration: float = 6.0, sample_rate: int = SAMPLE_RATE) -> Waveform:
    """One toy background-music clip: chords, a bass line and light drums."""
    rng = np.random.default_rng(seed)
    sr = sample_rate
    n = int(duration * sr)
    x = np.zeros(n)
    bpm = rng.uniform(80, 140)
    beat = 60.0 / bpm
    root = 57 + int(rng.integers(0, 12))
    n_partials_decay = rng.uniform(0.9, 1.6)
    tremolo = rng.uniform(3, 7)
    t = 0.0
    while t < duration:
        dur = beat * int(rng.choice([2, 4]))
        degrees = rng.choice(len(_SCALE), size=int(rng.integers(2, 4)), replace=False)
        notes = [root + _SCALE[d] + 12 * int(rng.integers(0, 2)) for d in degrees]
        notes.append(root - 12 + _SCALE[int(rng.integers(0, len(_SCALE)))])
        s, e = int(t * sr), min(n, int((t + dur) * sr))
        tt = np.arange(e - s) / sr
        adsr = np.minimum(1.0, tt / 0.02) * np.exp(-tt / (dur * 1.5))
        for m in notes:
            f = float(_midi_hz(m))
            ks = np.arange(1, int(0.45 * sr / f) + 1)
            partial = (ks[:, None] ** -n_partials_decay
                       * np.sin(2 * np.pi * f * ks[:, None] * tt[None, :] + rng.uniform(0, 6.28, (len(ks), 1))))
            x[s:e] += adsr * (1 + 0.15 * np.sin(2 * np.pi * tremolo * tt)) * partial.sum(0)
        t += dur
    # drums
    kick_t = np.arange(int(0.18 * sr)) / sr
    kick = np.sin(2 * np.pi * np.cumsum(45 + 110 * np.exp(-kick_t / 0.03)) / sr) * np.exp(-kick_t / 0.05)
    sos = signal.butter(4, 6000, btype="highpass", fs=sr, output="sos")
    hat = signal.sosfilt(sos, rng.standard_normal(int(0.05 * sr))) * np.exp(-np.arange(int(0.05 * sr)) / (0.01 * sr))
    t = 0.0
    i = 0
    while t < duration:
        s = int(t * sr)
        if i % 2 == 0:
            e = min(n, s + len(kick))
            x[s:e] += 2.0 * kick[:e - s]
        e = min(n, s + len(hat))
        x[s:e] += 0.6 * hat[:e - s]
        t += beat / 2 if i % 2 == 0 else beat / 2
        i += 1
    x /= max(np.sqrt(np.mean(x ** 2)), 1e-12)
    return Waveform(x * _TARGET_RMS, sr)


def speed_perturb(w: Waveform, factor: float) -> Waveform:
    """Resample so playback is ``factor`` times faster (pitch and tempo together)."""
    from fractions import Fraction
    fr = Fraction(factor).limit_denominator(50)
    y = signal.resample_poly(w.samples, fr.denominator, fr.numerator)
    return Waveform(y, w.sample_rate)
