import numpy as np
import pytest
import torch

from bgmtts import dsp


def numeric_grad(fn, tensors, eps=1e-3):
    """Central finite differences of scalar ``fn()`` w.r.t. every entry of ``tensors``."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = fn().item()
                flat[i] = orig - eps
                down = fn().item()
                flat[i] = orig
                gflat[i] = (up - down) / (2 * eps)
            grads.append(g)
    return grads


def grad_rel_error(fn, tensors, eps=1e-3):
    """``||g_autograd - g_fd|| / max(||g_autograd||, ||g_fd||)`` over all entries."""
    for t in tensors:
        t.grad = None
    fn().backward()
    analytic = torch.cat([(t.grad if t.grad is not None else torch.zeros_like(t)).reshape(-1) for t in tensors])
    numeric = torch.cat([g.reshape(-1) for g in numeric_grad(fn, tensors, eps)])
    scale = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def short_speech():
    from bgmtts import toy
    return toy.synth_speech("ma la", seed=3)


@pytest.fixture
def short_music():
    from bgmtts import toy
    return toy.synth_music(5, duration=2.0)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
    yield


def waveform(x, sr=dsp.SAMPLE_RATE):
    return dsp.Waveform(np.asarray(x, dtype=np.float64), sr)


# acceptance criterion -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
