import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bgmtts import dsp
from bgmtts.errors import TooShortError

SR = 16000
P = dsp.StftParams(1024, 1024, 256)


def tone(freq=440.0, seconds=1.0, amp=0.5):
    t = np.arange(int(seconds * SR)) / SR
    return dsp.Waveform(amp * np.sin(2 * np.pi * freq * t), SR)


def naive_stft(x, p):
    """Independent oracle: explicit reflect padding and a per-frame DFT sum."""
    pad = p.fft_size // 2
    xp = np.concatenate([x[pad:0:-1], x, x[-2:-pad - 2:-1]])
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(p.win_size) / p.win_size)
    n = np.arange(p.fft_size)
    k = np.arange(p.fft_size // 2 + 1)
    basis = np.exp(-2j * np.pi * np.outer(k, n) / p.fft_size)
    frames = []
    for t in range(1 + len(x) // p.hop_size):
        frames.append(basis @ (xp[t * p.hop_size:t * p.hop_size + p.fft_size] * win))
    return np.array(frames)


def test_window_in_samples():
    p = dsp.StftParams.from_ms(64, 16, SR)
    assert (p.fft_size, p.win_size, p.hop_size) == (1024, 1024, 256)


def test_stft_matches_naive_dft():
    p = dsp.StftParams(64, 64, 16)
    x = np.random.default_rng(0).standard_normal(300)
    got = dsp.stft(dsp.Waveform(x), p).values
    np.testing.assert_allclose(got, naive_stft(x, p), atol=1e-10)


def test_stft_of_silence():
    s = dsp.stft(dsp.Waveform(np.zeros(SR)), P)
    assert s.values.shape == (1 + SR // 256, 513)
    assert not np.any(s.values)


def test_stft_too_short():
    with pytest.raises(TooShortError):
        dsp.stft(dsp.Waveform(np.zeros(1000)), P)


def test_stft_linearity():
    w = tone()
    a = dsp.stft(dsp.Waveform(3.7 * w.samples)).values
    b = 3.7 * dsp.stft(w).values
    assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-6


def test_non_cola_rejected():
    with pytest.raises(ValueError):
        dsp.StftParams(1024, 1024, 300)
    with pytest.raises(ValueError):
        dsp.StftParams(1024, 1024, 2048)


def test_round_trip_tone():
    w = tone()
    assert np.max(np.abs(dsp.istft(dsp.stft(w)).samples - w.samples)) < 1e-6


def test_round_trip_noise():
    x = np.random.default_rng(1).standard_normal(SR)
    y = dsp.istft(dsp.stft(dsp.Waveform(x))).samples
    assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-6


def test_istft_zero():
    z = dsp.ComplexSpectrogram(np.zeros((20, 513), complex), P, SR, 4864)
    assert not np.any(dsp.istft(z).samples)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=1024, max_value=6000), st.integers(min_value=0, max_value=2 ** 31 - 1),
       st.sampled_from([256, 512]))
def test_round_trip_property(n, seed, hop):
    x = np.random.default_rng(seed).standard_normal(n)
    p = dsp.StftParams(1024, 1024, hop)
    y = dsp.istft(dsp.stft(dsp.Waveform(x), p)).samples
    assert len(y) == n
    assert np.linalg.norm(y - x) / np.linalg.norm(x) < 1e-6


def test_magnitude_and_phase():
    s = dsp.ComplexSpectrogram(np.array([[1 + 0j, 0j, 3 + 4j]]), dsp.StftParams(4, 4, 1))
    np.testing.assert_allclose(dsp.magnitude(s).values, [[1, 0, 5]])
    np.testing.assert_allclose(dsp.phase(s)[0, 2], math.atan2(4, 3))


# ----------------------------------------------------------------------------
# mel


def test_mel_shape_and_zero():
    m = dsp.MagnitudeSpectrogram(np.zeros((7, 513)))
    mel = dsp.mel_project(m, 80)
    assert mel.values.shape == (7, 80)
    assert not np.any(mel.values)


def test_filterbank_rows_nonempty_and_compact():
    fb = dsp.mel_filterbank(SR, 1024, 80, 0.0, 8000.0)
    assert fb.shape == (80, 513)
    assert np.all(fb.sum(axis=1) > 0)
    for row in fb:
        nz = np.flatnonzero(row)
        # contiguous support, much narrower than the spectrum
        assert np.all(np.diff(nz) == 1)
        assert len(nz) < 513 // 4


def test_filterbank_peaks_increase():
    fb = dsp.mel_filterbank(SR, 1024, 80, 0.0, 8000.0)
    assert np.all(np.diff(fb.argmax(axis=1)) >= 0)


def test_mel_bad_edges():
    with pytest.raises(ValueError):
        dsp.mel_project(dsp.MagnitudeSpectrogram(np.ones((2, 513))), 80, fmin=100, fmax=9000)
    with pytest.raises(ValueError):
        dsp.mel_project(dsp.MagnitudeSpectrogram(np.ones((2, 513))), 80, fmin=500, fmax=400)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5), st.integers(0, 2 ** 31 - 1))
def test_mel_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    m1, m2 = rng.random((5, 513)), rng.random((5, 513))
    mel = lambda m: dsp.mel_project(dsp.MagnitudeSpectrogram(m), 80).values
    np.testing.assert_allclose(mel(a * m1 + b * m2), a * mel(m1) + b * mel(m2), atol=1e-6)


def test_downsample_mel_time():
    mel = dsp.MelSpectrogram(np.arange(100 * 80, dtype=float).reshape(100, 80))
    assert dsp.downsample_mel_time(mel, 1).values.shape == (100, 80)
    d = dsp.downsample_mel_time(mel, 4)
    assert d.values.shape == (25, 80)
    for i in range(25):
        np.testing.assert_array_equal(d.values[i], mel.values[4 * i])
    assert dsp.downsample_mel_time(dsp.MelSpectrogram(np.zeros((10, 80))), 3).values.shape == (4, 80)
    with pytest.raises(ValueError):
        dsp.downsample_mel_time(mel, 0)


def test_log_min_max_round_trip():
    rng = np.random.default_rng(3)
    a = rng.random((30, 513)) * 50 + 1e-4
    stats = dsp.LogMinMax.fit([a])
    y = stats.normalize(a)
    assert y.min() >= 0 and y.max() <= 1
    np.testing.assert_allclose(stats.denormalize(y), a, rtol=1e-6)


# ----------------------------------------------------------------------------
# masking and mixing


def test_apply_mask_trivial():
    m = dsp.MagnitudeSpectrogram(np.random.default_rng(0).random((4, 6)))
    np.testing.assert_array_equal(dsp.apply_mask(m, dsp.Mask(np.ones((4, 6)))).values, m.values)
    assert not np.any(dsp.apply_mask(m, dsp.Mask(np.zeros((4, 6)))).values)
    np.testing.assert_array_equal(dsp.apply_mask(m, dsp.Mask(np.full((4, 6), 0.5))).values, m.values / 2)
    with pytest.raises(ValueError):
        dsp.apply_mask(m, dsp.Mask(np.ones((4, 5))))


@settings(max_examples=40)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_apply_mask_loop_oracle(r, c, seed):
    rng = np.random.default_rng(seed)
    m, k = rng.random((r, c)) * 10, rng.random((r, c))
    out = dsp.apply_mask(dsp.MagnitudeSpectrogram(m), dsp.Mask(k)).values
    expect = np.empty((r, c))
    for i in range(r):
        for j in range(c):
            expect[i, j] = m[i, j] * k[i, j]
    assert np.array_equal(out, expect)


def test_mask_range_enforced():
    with pytest.raises(ValueError):
        dsp.Mask(np.array([[1.5]]))


def _speech_like(seed, n=SR):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) * 0.05
    x[: n // 8] = 0.0  # leading pause
    return dsp.Waveform(x)


def test_mix_zero_db():
    s = _speech_like(0)
    mix, music = dsp.mix_at_snr(s, tone(300, 2.0), 0.0, seed=1)
    assert abs(dsp.measure_snr(s, music)) < 0.1
    np.testing.assert_allclose(mix.samples, s.samples + music.samples)


@pytest.mark.parametrize("snr", [0, 5, 10, 15, 20])
def test_mix_grid(snr):
    s = _speech_like(snr)
    mix, music = dsp.mix_at_snr(s, tone(250, 0.3), snr, seed=snr)  # short music gets looped
    # independent re-measurement from the returned mixture
    act = dsp.active_region(s.samples, SR)
    noise = mix.samples - s.samples
    measured = 10 * np.log10(np.mean(s.samples[act] ** 2) / np.mean(noise[act] ** 2))
    assert abs(measured - snr) < 0.1


def test_mix_errors():
    s = _speech_like(0)
    with pytest.raises(ValueError):
        dsp.mix_at_snr(s, tone(), math.inf, 0)
    with pytest.raises(ValueError):
        dsp.mix_at_snr(dsp.Waveform(np.zeros(SR)), tone(), 0, 0)
    with pytest.raises(ValueError):
        dsp.mix_at_snr(s, dsp.Waveform(np.zeros(SR)), 0, 0)
    with pytest.raises(ValueError):
        dsp.mix_at_snr(s, dsp.Waveform(np.ones(SR), 8000), 0, 0)


def test_mix_gain_vanishes_at_high_snr():
    s = _speech_like(0)
    _, m1 = dsp.mix_at_snr(s, tone(), 20, 0)
    _, m2 = dsp.mix_at_snr(s, tone(), 120, 0)
    assert np.abs(m2.samples).max() < 1e-4 * np.abs(m1.samples).max()


def test_mix_deterministic():
    s = _speech_like(0)
    a, _ = dsp.mix_at_snr(s, tone(300, 3.0), 5, 42)
    b, _ = dsp.mix_at_snr(s, tone(300, 3.0), 5, 42)
    np.testing.assert_array_equal(a.samples, b.samples)


# ----------------------------------------------------------------------------
# Griffin-Lim


@pytest.mark.parametrize("freq", [220.0, 440.0, 1000.0])
def test_griffin_lim_tone(freq):
    m = dsp.magnitude(dsp.stft(tone(freq)))
    w, res = dsp.griffin_lim_with_residuals(m, 60, seed=0)
    assert len(w) == SR
    assert res[-1] < 0.1


def test_griffin_lim_zero():
    w = dsp.griffin_lim(dsp.MagnitudeSpectrogram(np.zeros((10, 513)), length=2304), 5)
    assert not np.any(w.samples)


def test_griffin_lim_monotone():
    rng = np.random.default_rng(7)
    for trial in range(20):
        m = dsp.MagnitudeSpectrogram(rng.random((int(rng.integers(8, 30)), 513)) * rng.uniform(0.1, 10))
        for init in ("vocoder", "random"):
            _, res = dsp.griffin_lim_with_residuals(m, 15, seed=trial, init=init)
            assert all(b <= a + 1e-7 for a, b in zip(res, res[1:]))


def test_griffin_lim_iters_validated():
    with pytest.raises(ValueError):
        dsp.griffin_lim(dsp.MagnitudeSpectrogram(np.ones((4, 513))), 0)


# ----------------------------------------------------------------------------
# metrics


def test_si_snr_identity_and_scale():
    w = tone()
    assert dsp.si_snr(w, w) == dsp.SI_SNR_CAP_DB
    assert dsp.si_snr(w, dsp.Waveform(2 * w.samples)) == dsp.SI_SNR_CAP_DB


def test_si_snr_known_value():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(8000)
    n = rng.standard_normal(8000)
    n -= n @ (s - s.mean()) / ((s - s.mean()) @ (s - s.mean())) * (s - s.mean())  # orthogonal noise
    n *= np.linalg.norm(s - s.mean()) / np.linalg.norm(n - n.mean()) / np.sqrt(10)
    assert dsp.si_snr(dsp.Waveform(s), dsp.Waveform(s + n)) == pytest.approx(10.0, abs=1e-6)


@settings(max_examples=30)
@given(st.floats(0.01, 100), st.integers(0, 2 ** 31 - 1))
def test_si_snr_scale_invariant(a, seed):
    rng = np.random.default_rng(seed)
    s, e = rng.standard_normal(500), rng.standard_normal(500)
    assert dsp.si_snr(dsp.Waveform(s), dsp.Waveform(a * e)) == pytest.approx(
        dsp.si_snr(dsp.Waveform(s), dsp.Waveform(e)), abs=1e-9)


def test_si_snr_errors():
    with pytest.raises(ValueError):
        dsp.si_snr(dsp.Waveform(np.zeros(10)), dsp.Waveform(np.ones(10)))
    with pytest.raises(ValueError):
        dsp.si_snr(dsp.Waveform(np.ones(10)), dsp.Waveform(np.ones(11)))


def test_lsd():
    rng = np.random.default_rng(0)
    a = dsp.MagnitudeSpectrogram(rng.random((5, 513)) + 0.01)
    assert dsp.log_spectral_distance(a, a) == 0.0
    b = dsp.MagnitudeSpectrogram(a.values * 10)
    assert dsp.log_spectral_distance(a, b) == pytest.approx(20.0, abs=1e-9)
    z = dsp.MagnitudeSpectrogram(np.zeros((5, 513)))
    assert dsp.log_spectral_distance(z, dsp.MagnitudeSpectrogram(np.full((5, 513), 1e-3))) == pytest.approx(20.0)


# ----------------------------------------------------------------------------
# wav


def test_wav_round_trip(tmp_path):
    w = tone()
    dsp.write_wav(tmp_path / "a.wav", w)
    r = dsp.read_wav(tmp_path / "a.wav")
    assert r.sample_rate == SR and len(r) == len(w)
    assert np.max(np.abs(r.samples - w.samples)) < 1 / 32768 + 1e-12


def test_wav_rejects_other_rates(tmp_path):
    from bgmtts.errors import DataError
    dsp.write_wav(tmp_path / "b.wav", dsp.Waveform(np.zeros(100), 8000))
    with pytest.raises(DataError):
        dsp.read_wav(tmp_path / "b.wav")
