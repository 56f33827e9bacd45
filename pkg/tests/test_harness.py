import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bgmtts.errors import DataError
from bgmtts.harness import embed
from bgmtts.harness import experiment as E
from bgmtts.harness.config import PipelineConfig, default_lambda, dump_config, load_config, merge

from pathlib import Path

TINY = Path(__file__).with_name("tiny_config.json")


# ---------------------------------------------------------------- config

def test_merge_is_recursive_and_rejects_unknown_keys():
    cfg = merge(PipelineConfig(), {"tts": {"steps": 7, "model": {"hidden": 8}}})
    assert cfg.tts.steps == 7 and cfg.tts.model.hidden == 8
    assert cfg.tts.model.char_dim == PipelineConfig().tts.model.char_dim
    with pytest.raises(KeyError):
        merge(PipelineConfig(), {"tts": {"stpes": 7}})
    with pytest.raises(TypeError):
        merge(PipelineConfig(), {"tts": 3})


def test_config_dump_load_round_trip(tmp_path):
    cfg = load_config(TINY)
    dump_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


def test_lambda_table():
    assert default_lambda(0.1) == 0.001
    assert default_lambda(0.3) == 0.01 and default_lambda(0.5) == 0.01


def test_spec_validation():
    with pytest.raises(ValueError):
        E.ExperimentSpec("GST+MF", 0.1)  # filter variant without a checkpoint
    with pytest.raises(ValueError):
        E.ExperimentSpec("GST+Aux", 0.1, lam=0.0)
    with pytest.raises(ValueError):
        E.ExperimentSpec("GST", 0.1, lam=0.01)
    with pytest.raises(ValueError):
        E.ExperimentSpec("GST", 1.0)
    with pytest.raises(ValueError):
        E.ExperimentSpec("VITS", 0.1)
    s = E.ExperimentSpec.make("GST+MF+Aux", 0.1, filter_checkpoint="f.ckpt")
    assert s.lam == 0.001 and s.uses_filter and s.uses_aux and s.uses_gst
    assert s.degraded is E.QualityLabel.FILTERED
    assert E.ExperimentSpec.make("GST+Aux", 0.5).degraded is E.QualityLabel.NOISY
    assert E.ExperimentSpec.make("TTS", 0.5).degraded is None
    assert E.ExperimentSpec.make("GST+Aux", 0.5, lr_scale=100).name == "GST_Aux_c0.5_s0_lr100"


# ---------------------------------------------------------------- embeddings

def _clusters(rng, n=20, d=6, sep=10.0):
    a = rng.standard_normal((n, d))
    b = rng.standard_normal((n, d)) + sep / np.sqrt(d)
    return np.vstack([a, b]), np.array(["CLEAN"] * n + ["FILTERED"] * n)


def test_well_separated_clusters_score_high(rng):
    # silhouette ≈ 1 - sqrt(2d) / sqrt(sep² + 2d) ≈ 0.93 for sep=50, d=6
    x, y = _clusters(rng, sep=50.0)
    assert embed.silhouette(x, y) > 0.9
    p = embed.fit_pca(x)
    assert embed.silhouette(p.transform(x), y) > 0.9
    assert p.explained_variance_ratio[0] > 0.8


def test_overlapping_clusters_score_near_zero(rng):
    x, y = _clusters(rng, n=200, sep=0.0)
    assert abs(embed.silhouette(x, y)) < 0.1


def test_silhouette_undefined_for_one_class(rng):
    assert math.isnan(embed.silhouette(rng.standard_normal((5, 3)), ["CLEAN"] * 5))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 12), st.integers(2, 6))
def test_pca_projection_properties(seed, n, d):
    x = np.random.default_rng(seed).standard_normal((n, d)) * np.arange(1, d + 1)
    p = embed.fit_pca(x, 2)
    np.testing.assert_allclose(p.components @ p.components.T, np.eye(len(p.components)), atol=1e-9)
    # projecting the reconstruction reproduces the projection
    z = p.transform(x)
    np.testing.assert_allclose(p.transform(z @ p.components + p.mean), z, atol=1e-9)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-9)
    for c in p.components:
        assert c[np.argmax(np.abs(c))] > 0
    assert np.all(np.diff(p.explained_variance_ratio) <= 1e-12)
    assert p.explained_variance_ratio.sum() <= 1 + 1e-9


def test_pca_matches_variance_of_principal_axis(rng):
    x = rng.standard_normal((500, 3)) * [5.0, 1.0, 0.2]
    p = embed.fit_pca(x, 1)
    assert abs(p.components[0, 0]) > 0.99
    assert p.explained_variance_ratio[0] == pytest.approx(np.var(p.transform(x)[:, 0], ddof=1) /
                                                          np.var(x, axis=0, ddof=1).sum())


def test_embed_export_csv(rng, tmp_path):
    x, y = _clusters(rng, n=4, d=3, sep=50.0)
    ids = [f"u{i}" for i in range(len(y))]
    summary = embed.embed_export(ids, y, x, tmp_path / "e.csv")
    ids2, y2, x2, proj = embed.read_embedding_csv(tmp_path / "e.csv")
    assert ids2 == ids and list(y2) == list(y)
    np.testing.assert_array_equal(x2, x)
    np.testing.assert_allclose(proj, embed.fit_pca(x).transform(x))
    assert summary["n"] == 8 and summary["silhouette_embedding"] > 0.5
    first = (tmp_path / "e.csv").read_bytes()
    embed.embed_export(ids, y, x, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == first


def test_embed_export_needs_three_rows(tmp_path):
    with pytest.raises(DataError):
        embed.embed_export(["a", "b"], ["CLEAN", "FILTERED"], np.zeros((2, 3)), tmp_path / "e.csv")


# ---------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    cfg = load_config(TINY)
    root = tmp_path_factory.mktemp("tiny")
    ws = E.Workspace(root)
    specs = [dataclasses.replace(E.ExperimentSpec.make(v, 0.3, filter_checkpoint=str(ws.filter_checkpoint)
                                                       if "MF" in v else None), out_dir=str(ws.cells / v))
             for v in ("TTS", "GST+MF+Aux")]
    report = E.run_pipeline(cfg, root, specs)
    return cfg, root, report


def test_report_schema(tiny):
    cfg, root, report = tiny
    d = json.loads((root / "report.json").read_text())
    assert set(d) == {"header", "config", "filter", "cells"}
    assert set(d["header"]["proxies"]) == set(E.PROXIES)
    assert [r["snr_db"] for r in d["filter"]["per_snr"]] == cfg.ablation.eval_snrs
    for row in d["filter"]["per_snr"]:
        assert all(math.isfinite(v) for v in row.values())
    assert [c["status"] for c in d["cells"]] == [E.Status.OK] * 2
    tts, full = d["cells"]
    assert tts["metrics"]["aqc_accuracy"] is None and tts["metrics"]["silhouette"] is None
    for k in ("heldout_l1", "heldout_d_bd", "aqc_accuracy", "silhouette", "final_l_total"):
        assert math.isfinite(full["metrics"][k])
    assert full["lambda"] == 0.01 and full["steps"] == cfg.tts.steps
    assert E.EvalReport.load(root / "report.json").to_dict() == d


def test_pipeline_resumes_and_is_deterministic(tiny, tmp_path):
    cfg, root, report = tiny
    data = E.prepare_cell_data(E.Workspace(root), cfg)
    spec = E.ExperimentSpec.make("GST+MF+Aux", 0.3, filter_checkpoint=str(E.Workspace(root).filter_checkpoint))
    a, b = E.run_cell(spec, data, cfg.tts), E.run_cell(spec, data, cfg.tts)
    assert a["metrics"] == b["metrics"] == report.cells[1]["metrics"]


def test_cell_split_contract(tiny):
    cfg, root, _ = tiny
    data = E.prepare_cell_data(E.Workspace(root), cfg)
    spec = E.ExperimentSpec.make("GST+Aux", 0.3)
    train, held_clean, held_deg = E.cell_examples(spec, data)
    assert len(held_clean) == len(held_deg) == len(data.test_ids)
    assert {e.label for e in held_clean} == {0} and {e.label for e in held_deg} == {1}
    assert len(train) == len(data.clean) - len(data.test_ids)


def test_diverging_cell_is_isolated(tiny):
    cfg, root, _ = tiny
    data = E.prepare_cell_data(E.Workspace(root), cfg)
    bad = E.ExperimentSpec.make("GST+Aux", 0.3, lr_scale=1e30)  # parameters blow up after one step
    good = E.ExperimentSpec.make("GST+Aux", 0.3)
    reference = E.run_cell(good, data, cfg.tts)
    cells = E.run_ablation([bad, good], data, cfg.tts)
    assert cells[0]["status"] == E.Status.DIVERGED and "loss became" in cells[0]["error"]
    assert cells[1]["status"] == E.Status.OK
    assert cells[1]["metrics"] == reference["metrics"]


def test_failing_cell_is_isolated(tiny):
    cfg, root, _ = tiny
    data = E.prepare_cell_data(E.Workspace(root), cfg)
    broken = dataclasses.replace(data, mels={})  # every lookup fails
    cells = E.run_ablation([E.ExperimentSpec.make("GST", 0.3)], broken, cfg.tts)
    cells += E.run_ablation([E.ExperimentSpec.make("GST", 0.3)], data, cfg.tts)
    assert cells[0]["status"] == E.Status.FAILED and cells[0]["error"].startswith("KeyError")
    assert cells[1]["status"] == E.Status.OK


def test_report_refuses_nan(tmp_path):
    r = E.EvalReport({"a": 1}, cells=[{"x": float("nan")}])
    r.save(tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text())["cells"][0]["x"] is None
