"""Text → coarse mel → linear magnitude → waveform."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import dsp, features
from ..gsttts import SynthesisResult, Text2Mel, synthesize
from ..ssrn import Ssrn

PEAK = 0.95


@dataclass
class SynthOutput:
    waveform: dsp.Waveform
    result: SynthesisResult
    magnitude: np.ndarray


def synthesize_wav(t2m: Text2Mel, ssrn: Ssrn, text: str, reference: dsp.Waveform, seed: int = 0,
                   max_frames: int = 200, gl_iters: int = 60,
                   params: dsp.StftParams = dsp.StftParams()) -> SynthOutput:
    """Generate speech for ``text`` conditioned on a (clean) reference recording.

    The coarse mel is moved from the Text2Mel normalisation into the SSRN one,
    upsampled to a linear magnitude, and inverted with Griffin-Lim. The result
    is peak-normalised to ``PEAK``.
    """
    ref = features.coarse_mel(reference, t2m.mel_stats, t2m.config.downsample, params)
    res = synthesize(t2m, text, ref, max_frames)
    mel = ssrn.mel_stats.normalize(t2m.mel_stats.denormalize(res.mel))
    mag = ssrn.mag_stats.denormalize(ssrn.forward(mel))
    wave = dsp.griffin_lim(dsp.MagnitudeSpectrogram(mag, params), gl_iters, seed=seed)
    x = wave.samples
    peak = float(np.abs(x).max())
    if peak > 0:
        x = x * (PEAK / peak)
    return SynthOutput(dsp.Waveform(x, wave.sample_rate), res, mag)
