"""Distribution self-rectification of latent class means.

Starting from the per-class mean of the support anchors, the means are
optimised under a cross-entropy term (anchors should sit closest to their
own class mean) plus a negative-entropy term over the mean query relation
scores (queries should not collapse onto few classes). The resulting
per-class offset is applied to every anchor of that class.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch, EmptyClass
from .optim import AdamState, adam_step

LOG_GUARD = 1e-30


@dataclass
class RectifyConfig:
    lam: float = 0.1  # weight of the cross-entropy term
    temperature: float = 0.5
    iters: int = 1000
    lr: float = 1e-4
    use_ce: bool = True
    use_se: bool = True


@dataclass
class RectificationResult:
    class_means: np.ndarray  # (d, C) before rectification
    rectified_means: np.ndarray  # (d, C)
    offsets: np.ndarray  # (d, C), rectified - original
    rectified_anchors: np.ndarray  # (d, n_support_cols)
    trace: list = field(default_factory=list)  # (step, l_ce, l_se)

    def trace_jsonl(self) -> str:
        return "\n".join(
            json.dumps({"step": s, "l_ce": a, "l_se": b}) for s, a, b in self.trace
        )


def class_means(h_support: np.ndarray, labels: np.ndarray, n_classes: int) -> np.ndarray:
    """(d, C) arithmetic mean of the anchors of each class."""
    y = np.asarray(labels, dtype=np.int64)
    if y.shape[0] != h_support.shape[1]:
        raise DimMismatch("labels length != anchor columns")
    out = np.empty((h_support.shape[0], n_classes))
    for c in range(n_classes):
        cols = y == c
        if not np.any(cols):
            raise EmptyClass(f"class {c} has no anchors")
        out[:, c] = h_support[:, cols].mean(axis=1)
    return out


def _sq_dists(x: np.ndarray, means: np.ndarray) -> np.ndarray:
    """(n, C) squared Euclidean distances, columns of x vs columns of means."""
    sx = np.sum(x * x, axis=0)[:, None]
    sg = np.sum(means * means, axis=0)[None, :]
    return sx + sg - 2.0 * (x.T @ means)


def relation_matrix(x: np.ndarray, means: np.ndarray, temperature: float) -> np.ndarray:
    """Row-stochastic relation scores softmax(-T * squared distance)."""
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    z = -temperature * _sq_dists(x, means)
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def relation_scores(h: np.ndarray, means: np.ndarray, temperature: float) -> np.ndarray:
    """Relation of one latent vector to every class; sums to 1."""
    return relation_matrix(np.asarray(h, dtype=float)[:, None], means, temperature)[0]


def ce_loss(alpha: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log relation score of the true class."""
    y = np.asarray(labels, dtype=np.int64)
    picked = alpha[np.arange(alpha.shape[0]), y]
    return float(-np.mean(np.log(np.maximum(picked, LOG_GUARD))))


def se_loss(alpha_query: np.ndarray) -> float:
    """Negative entropy of the mean query relation vector (0 log 0 := 0)."""
    bar = alpha_query.mean(axis=0)
    terms = np.where(bar > 0.0, bar * np.log(np.maximum(bar, LOG_GUARD)), 0.0)
    return float(np.sum(terms))


def _dists_to_means_grad(x, means, d_sigma):
    """Back-propagate d(loss)/d(sq dists) onto the means."""
    col = d_sigma.sum(axis=0)[None, :]
    return 2.0 * (means * col - x @ d_sigma)


def ce_value_grad(means, h_support, labels, temperature):
    """Cross-entropy value and gradient w.r.t. the class means."""
    y = np.asarray(labels, dtype=np.int64)
    alpha = relation_matrix(h_support, means, temperature)
    n = alpha.shape[0]
    value = ce_loss(alpha, y)
    d_z = alpha.copy()
    d_z[np.arange(n), y] -= 1.0
    d_z /= n
    d_sigma = -temperature * d_z
    return value, _dists_to_means_grad(h_support, means, d_sigma)


def se_value_grad(means, h_query, temperature):
    """Negative-entropy value and gradient w.r.t. the class means."""
    alpha = relation_matrix(h_query, means, temperature)
    n_q = alpha.shape[0]
    bar = alpha.mean(axis=0)
    value = float(np.sum(np.where(bar > 0.0, bar * np.log(np.maximum(bar, LOG_GUARD)), 0.0)))
    v = np.log(np.maximum(bar, LOG_GUARD)) + 1.0
    d_alpha = v[None, :] / n_q
    inner = np.sum(alpha * d_alpha, axis=1, keepdims=True)
    d_z = alpha * (d_alpha - inner)
    d_sigma = -temperature * d_z
    return value, _dists_to_means_grad(h_query, means, d_sigma)


def rectify(
    h_support: np.ndarray,
    h_query: np.ndarray,
    labels: np.ndarray,
    config: RectifyConfig,
    n_classes: int | None = None,
) -> RectificationResult:
    """Optimise the class means, then shift each anchor by its class offset.

    Anchors and queries stay frozen; the relation scores are recomputed
    from the evolving means every step.
    """
    y = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    start = class_means(h_support, y, n_classes)
    means = start.copy()
    adam = AdamState(lr=config.lr)
    trace = []
    for step in range(config.iters):
        grad = np.zeros_like(means)
        l_ce, g_ce = ce_value_grad(means, h_support, y, config.temperature)
        l_se, g_se = se_value_grad(means, h_query, config.temperature)
        if config.use_ce:
            grad += config.lam * g_ce
        if config.use_se:
            grad += g_se
        trace.append((step, l_ce, l_se))
        (means,), adam = adam_step([means], [grad], adam)
    offsets = means - start
    rectified_anchors = h_support + offsets[:, y]
    return RectificationResult(
        class_means=start,
        rectified_means=means,
        offsets=offsets,
        rectified_anchors=rectified_anchors,
        trace=trace,
    )
