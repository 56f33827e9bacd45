"""Quality-embedding export: 2-D PCA projection and cluster separation."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.metrics import silhouette_score

from ..errors import DataError


@dataclass(frozen=True)
class Pca:
    mean: np.ndarray  # [d]
    components: np.ndarray  # [k, d], rows orthonormal
    explained_variance_ratio: np.ndarray  # [k]

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - self.mean) @ self.components.T


def fit_pca(x: np.ndarray, k: int = 2) -> Pca:
    """Eigendecomposition of the centred covariance.

    Each component's sign is chosen so its largest-magnitude entry is positive.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two samples for PCA")
    k = min(k, x.shape[1])
    mean = x.mean(0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    comps = vecs[:, :k].T.copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1
    total = vals.sum()
    ratio = vals[:k] / total if total > 0 else np.zeros(k)
    return Pca(mean, comps, ratio)


def silhouette(points: np.ndarray, labels: Sequence) -> float:
    """Mean silhouette; ``nan`` when there are fewer than two classes."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2 or len(labels) < 3:
        return float("nan")
    return float(silhouette_score(np.asarray(points, dtype=np.float64), labels))


def embed_export(ids: Sequence[str], labels: Sequence[str], embeddings: np.ndarray, out_csv) -> dict:
    """Write ``id, label, e0..e{d-1}, pc1, pc2`` rows and return a summary
    with the explained-variance ratios and silhouette scores."""
    emb = np.asarray(embeddings, dtype=np.float64)
    if len(ids) < 3:
        raise DataError(f"embedding export needs at least 3 utterances, got {len(ids)}")
    if not (len(ids) == len(labels) == emb.shape[0]):
        raise ValueError("ids, labels and embeddings disagree in length")
    pca = fit_pca(emb, 2)
    proj = pca.transform(emb)
    if proj.shape[1] < 2:
        proj = np.pad(proj, ((0, 0), (0, 2 - proj.shape[1])))
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utterance_id", "label"] + [f"e{i}" for i in range(emb.shape[1])] + ["pc1", "pc2"])
        for uid, lab, e, p in zip(ids, labels, emb, proj):
            w.writerow([uid, lab] + [repr(float(v)) for v in e] + [repr(float(v)) for v in p])
    return {
        "n": len(ids),
        "explained_variance_ratio": [float(v) for v in pca.explained_variance_ratio],
        "silhouette_embedding": silhouette(emb, labels),
        "silhouette_pca": silhouette(proj, labels),
    }


def read_embedding_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_e = sum(1 for h in header if h.startswith("e") and h[1:].isdigit())
    ids = [r[0] for r in body]
    labels = [r[1] for r in body]
    emb = np.array([[float(v) for v in r[2:2 + n_e]] for r in body])
    proj = np.array([[float(v) for v in r[2 + n_e:]] for r in body])
    return ids, labels, emb, proj
