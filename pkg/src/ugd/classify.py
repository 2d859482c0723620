"""Metric classifier over rectified anchors, plus the zero-pad baselines.

The baselines represent every sample as the concatenation of its views
(missing views replaced with zero vectors) and classify with prototype
means or cosine attention over the supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Episode, MultiViewSample
from .errors import DimMismatch, ZeroVector
from .rectify import class_means


@dataclass(frozen=True)
class Classifier:
    """One weight vector per class (columns) and a softmax temperature."""

    weights: np.ndarray  # (d, C)
    temperature: float


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray  # (C,), sums to 1
    label: int  # argmax, ties to the smaller class index


def build_classifier(
    rectified_anchors: np.ndarray, labels: np.ndarray, temperature: float,
    n_classes: int | None = None,
) -> Classifier:
    """Class weights are the per-class means of the rectified anchors."""
    y = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    weights = class_means(rectified_anchors, y, n_classes)
    return Classifier(weights=weights, temperature=float(temperature))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(classifier: Classifier, h_query: np.ndarray) -> Prediction:
    """Softmax over negative temperature-scaled squared distances."""
    h = np.asarray(h_query, dtype=float)
    if h.shape != (classifier.weights.shape[0],):
        raise DimMismatch(f"query dim {h.shape} vs classifier dim {classifier.weights.shape[0]}")
    diff = classifier.weights - h[:, None]
    logits = -classifier.temperature * np.sum(diff * diff, axis=0)
    probs = _softmax(logits)
    return Prediction(probs=probs, label=int(np.argmax(logits)))


def predict_batch(classifier: Classifier, h_queries: np.ndarray) -> list[Prediction]:
    """predict() over the columns of a (d, n) matrix."""
    return [predict(classifier, h_queries[:, j]) for j in range(h_queries.shape[1])]


# ---------------------------------------------------------------------------
# zero-pad concatenation baselines
# ---------------------------------------------------------------------------


def zero_pad_concat(sample: MultiViewSample, dims) -> np.ndarray:
    """Concatenate all views, substituting zero vectors for missing ones."""
    parts = [
        sample.views[v] if sample.mask[v] else np.zeros(dims[v])
        for v in range(len(dims))
    ]
    return np.concatenate(parts)


def _episode_concat(episode: Episode):
    dims = episode.view_spec.dims
    support = np.stack([zero_pad_concat(s, dims) for s in episode.support])
    query = np.stack([zero_pad_concat(q, dims) for q in episode.query])
    return support, query, episode.support_targets()


def proto_baseline(episode: Episode) -> list[Prediction]:
    """Nearest class-mean over zero-padded concatenations."""
    support, query, y = _episode_concat(episode)
    n_ways = episode.n_ways
    protos = np.stack([support[y == c].mean(axis=0) for c in range(n_ways)])
    out = []
    for q in query:
        d2 = np.sum((protos - q[None, :]) ** 2, axis=1)
        logits = -d2
        out.append(Prediction(probs=_softmax(logits), label=int(np.argmax(logits))))
    return out


def match_baseline(episode: Episode) -> list[Prediction]:
    """Cosine-attention over supports, attention mass summed per class."""
    support, query, y = _episode_concat(episode)
    n_ways = episode.n_ways
    s_norm = np.linalg.norm(support, axis=1)
    if np.any(s_norm == 0.0):
        raise ZeroVector("a support concatenation has zero norm")
    out = []
    for q in query:
        q_norm = np.linalg.norm(q)
        if q_norm == 0.0:
            raise ZeroVector("a query concatenation has zero norm")
        cos = support @ q / (s_norm * q_norm)
        attention = _softmax(cos)
        probs = np.zeros(n_ways)
        np.add.at(probs, y, attention)
        out.append(Prediction(probs=probs, label=int(np.argmax(probs))))
    return out
