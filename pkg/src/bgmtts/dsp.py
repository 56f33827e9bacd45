"""Signal-processing kernel: STFT analysis/synthesis, mel projection,
SNR-calibrated mixing, masking, Griffin-Lim and quality proxy metrics.

Everything here is a pure numpy function on immutable inputs.
Spectrogram matrices are laid out ``[frames x bins]``.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile

from .errors import DataError, TooShortError

SAMPLE_RATE = 16000
SI_SNR_CAP_DB = 60.0
LSD_FLOOR_DB = -80.0
VAD_THRESHOLD_DBFS = -40.0
VAD_FRAME_S = 0.032


# --------------------------------------------------------------------------
# types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {x.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains NaN or Inf")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _hann(n: int) -> np.ndarray:
    # periodic Hann: exact COLA at hops n/2, n/4, ...
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


_WINDOWS = {"hann": _hann}


@dataclass(frozen=True)
class StftParams:
    fft_size: int = 1024
    win_size: int = 1024
    hop_size: int = 256
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop_size <= self.win_size <= self.fft_size):
            raise ValueError(
                f"need 0 < hop <= win <= fft, got {self.hop_size}/{self.win_size}/{self.fft_size}")
        if self.fft_size % 2:
            raise ValueError("fft_size must be even")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}")
        if not _is_cola(self.analysis_window(), self.hop_size):
            raise ValueError(
                f"{self.window} window of {self.win_size} samples is not COLA at hop {self.hop_size}")

    @classmethod
    def from_ms(cls, win_ms: float, hop_ms: float, sample_rate: int = SAMPLE_RATE,
                fft_size: Optional[int] = None, window: str = "hann") -> "StftParams":
        win = int(round(win_ms * sample_rate / 1000.0))
        hop = int(round(hop_ms * sample_rate / 1000.0))
        return cls(fft_size=fft_size or win, win_size=win, hop_size=hop, window=window)

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.fft_size // 2

    def analysis_window(self) -> np.ndarray:
        """Window zero-padded (centred) to ``fft_size``."""
        w = _WINDOWS[self.window](self.win_size)
        left = (self.fft_size - self.win_size) // 2
        return np.pad(w, (left, self.fft_size - self.win_size - left))

    def n_frames(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop_size


def _is_cola(window: np.ndarray, hop: int) -> bool:
    n = len(window)
    reps = int(math.ceil(n / hop)) * 2 + 1
    acc = np.zeros(hop * reps + n)
    for k in range(reps):
        acc[k * hop:k * hop + n] += window
    steady = acc[n:n + hop]
    return steady.min() > 0 and np.ptp(steady) <= 1e-9 * steady.max()


@dataclass(frozen=True)
class ComplexSpectrogram:
    values: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    sample_rate: int = SAMPLE_RATE
    length: Optional[int] = None  # original signal length, used to trim on synthesis

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.params.n_bins:
            raise ValueError(
                f"expected [frames x {self.params.n_bins}] matrix, got {self.values.shape}")


@dataclass(frozen=True)
class MagnitudeSpectrogram:
    values: np.ndarray
    params: StftParams = field(default_factory=StftParams)
    sample_rate: int = SAMPLE_RATE
    length: Optional[int] = None

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("magnitude spectrogram must be 2-D")
        if np.any(self.values < 0):
            raise ValueError("magnitude spectrogram has negative entries")

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class MelSpectrogram:
    values: np.ndarray
    n_mels: int = 80
    params: StftParams = field(default_factory=StftParams)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.n_mels:
            raise ValueError(f"expected [frames x {self.n_mels}], got {self.values.shape}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Mask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("mask must be 2-D")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("mask entries must lie in [0, 1]")


# --------------------------------------------------------------------------
# STFT
# --------------------------------------------------------------------------


def _analysis(y: np.ndarray, p: StftParams, n_frames: int) -> np.ndarray:
    """Frame an already padded signal (frame t starts at t*hop) and FFT it."""
    frames = np.lib.stride_tricks.sliding_window_view(y, p.fft_size)[::p.hop_size][:n_frames]
    return np.fft.rfft(frames * p.analysis_window(), axis=1)


def _overlap_add(values: np.ndarray, p: StftParams) -> np.ndarray:
    """Least-squares inverse of `_analysis` on the padded time axis."""
    n = values.shape[0]
    win = p.analysis_window()
    frames = np.fft.irfft(values, n=p.fft_size, axis=1) * win
    total = p.fft_size + p.hop_size * (n - 1)
    y = np.zeros(total)
    wsum = np.zeros(total)
    w2 = win ** 2
    for t in range(n):
        s = t * p.hop_size
        y[s:s + p.fft_size] += frames[t]
        wsum[s:s + p.fft_size] += w2
    # samples no frame observes are left at zero
    nz = wsum > 1e-10
    y[nz] /= wsum[nz]
    y[~nz] = 0.0
    return y


def stft(w: Waveform, p: StftParams = StftParams()) -> ComplexSpectrogram:
    """Centred STFT: reflect padding of ``fft_size/2`` samples on both ends, so
    frame ``t`` is centred on sample ``t*hop`` and there are ``1 + len//hop`` frames."""
    x = w.samples
    if len(x) < p.win_size:
        raise TooShortError(f"signal has {len(x)} samples, shorter than one window ({p.win_size})")
    xp = np.pad(x, p.pad, mode="reflect")
    values = _analysis(xp, p, p.n_frames(len(x)))
    return ComplexSpectrogram(values, p, w.sample_rate, len(x))


def istft(s: ComplexSpectrogram, length: Optional[int] = None) -> Waveform:
    p = s.params
    y = _overlap_add(s.values, p)
    if length is None:
        length = s.length if s.length is not None else p.hop_size * (s.values.shape[0] - 1)
    out = y[p.pad:p.pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return Waveform(out, s.sample_rate)


def magnitude(s: ComplexSpectrogram) -> MagnitudeSpectrogram:
    return MagnitudeSpectrogram(np.abs(s.values), s.params, s.sample_rate, s.length)


def phase(s: ComplexSpectrogram) -> np.ndarray:
    return np.angle(s.values)


def combine(m: MagnitudeSpectrogram, phase_matrix: np.ndarray) -> ComplexSpectrogram:
    if m.values.shape != phase_matrix.shape:
        raise ValueError(f"shape mismatch {m.values.shape} vs {phase_matrix.shape}")
    return ComplexSpectrogram(m.values * np.exp(1j * phase_matrix), m.params, m.sample_rate, m.length)


# --------------------------------------------------------------------------
# mel
# --------------------------------------------------------------------------

_F_SP = 200.0 / 3
_MIN_LOG_HZ = 1000.0
_MIN_LOG_MEL = _MIN_LOG_HZ / _F_SP
_LOGSTEP = math.log(6.4) / 27.0


def hz_to_mel(f):
    f = np.asarray(f, dtype=np.float64)
    lin = f / _F_SP
    log = _MIN_LOG_MEL + np.log(np.maximum(f, 1e-10) / _MIN_LOG_HZ) / _LOGSTEP
    return np.where(f >= _MIN_LOG_HZ, log, lin)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    lin = _F_SP * m
    log = _MIN_LOG_HZ * np.exp(_LOGSTEP * (m - _MIN_LOG_MEL))
    return np.where(m >= _MIN_LOG_MEL, log, lin)


@functools.lru_cache(maxsize=16)
def mel_filterbank(sample_rate: int, fft_size: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Slaney-style triangular filterbank, area normalised, shape ``[n_mels x bins]``."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if not (0 <= fmin < fmax <= sample_rate / 2):
        raise ValueError(f"invalid band edges fmin={fmin}, fmax={fmax} for sr={sample_rate}")
    fft_freqs = np.linspace(0, sample_rate / 2, fft_size // 2 + 1)
    mel_f = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(mel_f)
    ramps = mel_f[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_f[2:] - mel_f[:-2]))[:, None]
    weights.setflags(write=False)
    return weights


def mel_project(m: MagnitudeSpectrogram, n_mels: int = 80, fmin: float = 0.0,
                fmax: Optional[float] = None) -> MelSpectrogram:
    fmax = m.sample_rate / 2 if fmax is None else fmax
    fb = mel_filterbank(m.sample_rate, m.params.fft_size, n_mels, float(fmin), float(fmax))
    return MelSpectrogram(m.values @ fb.T, n_mels, m.params, m.sample_rate)


def downsample_mel_time(mel: MelSpectrogram, factor: int) -> MelSpectrogram:
    if factor < 1:
        raise ValueError("factor must be >= 1")
    return MelSpectrogram(mel.values[::factor], mel.n_mels, mel.params, mel.sample_rate)


@dataclass(frozen=True)
class LogMinMax:
    """Log compression followed by min-max scaling into [0, 1].

    Used for TTS mel targets and SSRN magnitude targets; the statistics are
    fitted once per corpus.
    """
    lo: float
    hi: float
    floor: float = 1e-5

    @classmethod
    def fit(cls, arrays, floor: float = 1e-5) -> "LogMinMax":
        lo, hi = np.inf, -np.inf
        for a in arrays:
            la = np.log(np.maximum(a, floor))
            lo, hi = min(lo, float(la.min())), max(hi, float(la.max()))
        if not np.isfinite(lo) or hi <= lo:
            raise ValueError("cannot fit normalisation statistics on constant or empty data")
        return cls(lo, hi, floor)

    def normalize(self, a: np.ndarray) -> np.ndarray:
        la = np.log(np.maximum(a, self.floor))
        return np.clip((la - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def denormalize(self, y: np.ndarray) -> np.ndarray:
        return np.exp(np.asarray(y) * (self.hi - self.lo) + self.lo)

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "floor": self.floor}


# --------------------------------------------------------------------------
# masking and mixing
# --------------------------------------------------------------------------


def apply_mask(m: MagnitudeSpectrogram, k: Mask) -> MagnitudeSpectrogram:
    if m.values.shape != np.shape(k.values):
        raise ValueError(f"mask shape {np.shape(k.values)} != spectrogram shape {m.values.shape}")
    return MagnitudeSpectrogram(m.values * k.values, m.params, m.sample_rate, m.length)


def active_region(x: np.ndarray, sample_rate: int,
                  threshold_dbfs: float = VAD_THRESHOLD_DBFS,
                  frame_s: float = VAD_FRAME_S) -> np.ndarray:
    """Boolean per-sample mask of non-overlapping frames whose energy exceeds the threshold."""
    n = max(1, int(round(frame_s * sample_rate)))
    active = np.zeros(len(x), dtype=bool)
    for s in range(0, len(x), n):
        seg = x[s:s + n]
        power = float(np.mean(seg ** 2))
        if power > 0 and 10 * math.log10(power) > threshold_dbfs:
            active[s:s + n] = True
    return active


def measure_snr(speech: Waveform, noise: Waveform) -> float:
    """SNR in dB with both powers taken over the speech's active region."""
    act = active_region(speech.samples, speech.sample_rate)
    if not act.any():
        raise ValueError("speech has no active region")
    ps = float(np.mean(speech.samples[act] ** 2))
    pn = float(np.mean(noise.samples[act] ** 2))
    if pn == 0:
        return math.inf
    return 10 * math.log10(ps / pn)


def fit_length(music: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Random crop (longer music) or loop from a random offset (shorter music)."""
    if len(music) == 0:
        raise ValueError("music is empty")
    if len(music) >= length:
        off = int(rng.integers(0, len(music) - length + 1))
        return music[off:off + length]
    off = int(rng.integers(0, len(music)))
    reps = (off + length) // len(music) + 1
    return np.tile(music, reps)[off:off + length]


def mix_at_snr(speech: Waveform, music: Waveform, snr_db: float, seed: int):
    """Scale ``music`` so the pair has the requested SNR and add it to ``speech``.

    Returns ``(mixture, scaled_music)``. The music is cropped or looped to the
    speech length with a seeded random offset.
    """
    if speech.sample_rate != music.sample_rate:
        raise ValueError(f"sample rates differ: {speech.sample_rate} vs {music.sample_rate}")
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    rng = np.random.default_rng(seed)
    seg = fit_length(music.samples, len(speech), rng)
    act = active_region(speech.samples, speech.sample_rate)
    if not act.any():
        raise ValueError("speech is silent (no active region)")
    ps = float(np.mean(speech.samples[act] ** 2))
    pn = float(np.mean(seg[act] ** 2))
    if pn == 0:
        raise ValueError("music is silent over the speech's active region")
    gain = math.sqrt(ps / (pn * 10 ** (snr_db / 10)))
    scaled = Waveform(gain * seg, speech.sample_rate)
    return Waveform(speech.samples + scaled.samples, speech.sample_rate), scaled


# --------------------------------------------------------------------------
# Griffin-Lim
# --------------------------------------------------------------------------


def phase_vocoder_init(mag: np.ndarray, p: StftParams, rng: np.random.Generator) -> np.ndarray:
    """Initial unit phasors from peak-locked phase advance.

    Each bin takes the interpolated frequency of its nearest spectral peak and
    advances its phase by that frequency times the hop; bins in a peak's lobe
    alternate by pi. Starting phases of the first frame are random.
    """
    n, k_bins = mag.shape
    lm = np.log(mag + 1e-12)
    bins = np.arange(k_bins)
    acc = rng.uniform(0, 2 * np.pi, k_bins)
    out = np.empty((n, k_bins))
    for t in range(n):
        m = mag[t]
        peaks = np.flatnonzero((m[1:-1] > m[:-2]) & (m[1:-1] >= m[2:])) + 1
        if len(peaks) == 0:
            out[t] = acc
            continue
        a, b, c = lm[t, peaks - 1], lm[t, peaks], lm[t, peaks + 1]
        den = a - 2 * b + c
        safe = np.abs(den) > 1e-12
        delta = np.where(safe, 0.5 * (a - c) / np.where(safe, den, 1.0), 0.0)
        freq = (peaks + delta) / p.fft_size  # cycles per sample
        owner = np.searchsorted((peaks[:-1] + peaks[1:]) / 2, bins)
        at_peaks = acc[peaks] + 2 * np.pi * freq * p.hop_size
        acc = at_peaks[owner] + np.pi * (bins - peaks[owner])
        out[t] = acc
    return np.exp(1j * out)


def griffin_lim_with_residuals(m: MagnitudeSpectrogram, iters: int = 60, seed: int = 0,
                               length: Optional[int] = None, init: str = "vocoder"):
    """Griffin-Lim. Returns ``(waveform, residuals)`` where ``residuals[k]``
    is ``|| |STFT(x_k)| - m || / ||m||`` after iteration ``k``.

    The iteration runs on the padded time axis, where overlap-add followed by
    analysis is an exact orthogonal projection, so the residual never increases.
    ``init`` is ``"vocoder"`` (peak-locked phase advance) or ``"random"``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    p = m.params
    mag = m.values
    n = mag.shape[0]
    if length is None:
        length = m.length if m.length is not None else p.hop_size * (n - 1)
    norm = float(np.linalg.norm(mag))
    if norm == 0.0:
        return Waveform(np.zeros(length), m.sample_rate), [0.0] * iters
    rng = np.random.default_rng(seed)
    if init == "vocoder":
        angles = phase_vocoder_init(mag, p, rng)
    elif init == "random":
        angles = np.exp(2j * np.pi * rng.random(mag.shape))
    else:
        raise ValueError(f"unknown init {init!r}")
    residuals = []
    y = None
    for _ in range(iters):
        y = _overlap_add(mag * angles, p)
        rebuilt = _analysis(y, p, n)
        residuals.append(float(np.linalg.norm(np.abs(rebuilt) - mag)) / norm)
        a = np.abs(rebuilt)
        angles = np.where(a > 0, rebuilt / np.where(a > 0, a, 1.0), 1.0)
    out = y[p.pad:p.pad + length]
    if len(out) < length:
        out = np.pad(out, (0, length - len(out)))
    return Waveform(out, m.sample_rate), residuals


def griffin_lim(m: MagnitudeSpectrogram, iters: int = 60, seed: int = 0,
                length: Optional[int] = None, init: str = "vocoder") -> Waveform:
    return griffin_lim_with_residuals(m, iters, seed, length, init)[0]


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------


def si_snr(reference: Waveform, estimate: Waveform) -> float:
    r = np.asarray(reference.samples if isinstance(reference, Waveform) else reference, dtype=np.float64)
    e = np.asarray(estimate.samples if isinstance(estimate, Waveform) else estimate, dtype=np.float64)
    if r.shape != e.shape:
        raise ValueError(f"length mismatch {r.shape} vs {e.shape}")
    r = r - r.mean()
    e = e - e.mean()
    rr = float(r @ r)
    if rr == 0:
        raise ValueError("reference is zero")
    target = (float(e @ r) / rr) * r
    noise = e - target
    tt, nn = float(target @ target), float(noise @ noise)
    if nn <= tt * 10 ** (-SI_SNR_CAP_DB / 10):
        return SI_SNR_CAP_DB
    if tt == 0:
        return -SI_SNR_CAP_DB
    return max(-SI_SNR_CAP_DB, 10 * math.log10(tt / nn))


def log_spectral_distance(a: MagnitudeSpectrogram, b: MagnitudeSpectrogram) -> float:
    va = a.values if isinstance(a, MagnitudeSpectrogram) else np.asarray(a)
    vb = b.values if isinstance(b, MagnitudeSpectrogram) else np.asarray(b)
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch {va.shape} vs {vb.shape}")
    floor = 10 ** (LSD_FLOOR_DB / 20)
    da = 20 * np.log10(np.maximum(va, floor))
    db = 20 * np.log10(np.maximum(vb, floor))
    return float(np.mean(np.sqrt(np.mean((da - db) ** 2, axis=1))))


# --------------------------------------------------------------------------
# WAV I/O
# --------------------------------------------------------------------------


def read_wav(path, expected_rate: int = SAMPLE_RATE) -> Waveform:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype.kind == "f":
        x = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(x, rate)


def write_wav(path, w: Waveform) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.round(np.clip(w.samples, -1.0, 32767 / 32768) * 32768).astype(np.int16)
    wavfile.write(path, w.sample_rate, pcm)
