"""Inverse anchor aggregation into a unified latent space.

A latent matrix H (one column per anchor/query) and per-view linear
evaluators (W_v, b_v) are optimised alternately: first the evaluators to
reconstruct each view from H, then H against the frozen evaluators plus a
label-constraint penalty on the support-anchor columns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimMismatch
from .estimate import AnchorBatch
from .optim import AdamState, adam_step
from .rng import TAG_INIT, substream


@dataclass
class AggregationConfig:
    latent_dim: int | None = None  # None -> max view dim
    iters: int = 30
    n1: int = 10
    n2: int = 10
    lr_w: float = 1e-2
    lr_h: float = 1e-2
    use_constraint: bool = True
    seed: int = 0


@dataclass
class LatentState:
    """Latent columns plus evaluator parameters and their Adam buffers."""

    H: np.ndarray  # (d, n_cols)
    W: list  # view -> (d_v, d)
    b: list  # view -> (d_v,)
    n_support_cols: int
    adam_wb: AdamState
    adam_h: AdamState

    @property
    def latent_dim(self) -> int:
        return self.H.shape[0]

    @property
    def support_latent(self) -> np.ndarray:
        return self.H[:, : self.n_support_cols]

    @property
    def query_latent(self) -> np.ndarray:
        return self.H[:, self.n_support_cols :]


@dataclass
class AggregationTrace:
    """Reconstruction and constraint loss per outer iteration."""

    records: list = field(default_factory=list)  # (iter, l_agg, l_cst)

    def to_jsonl(self) -> str:
        return "\n".join(
            json.dumps({"iter": i, "l_agg": a, "l_cst": c}) for i, a, c in self.records
        )


def init_latent(batch: AnchorBatch, latent_dim: int, seed: int,
                lr_w: float = 1e-2, lr_h: float = 1e-2) -> LatentState:
    """Xavier-uniform H and W_v, zero biases; deterministic given seed."""
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    rng = substream(seed, TAG_INIT)
    a_h = np.sqrt(6.0 / (latent_dim + latent_dim))
    H = rng.uniform(-a_h, a_h, size=(latent_dim, batch.n_cols))
    W, b = [], []
    for d_v in batch.dims:
        a_w = np.sqrt(6.0 / (latent_dim + d_v))
        W.append(rng.uniform(-a_w, a_w, size=(d_v, latent_dim)))
        b.append(np.zeros(d_v))
    return LatentState(
        H=H, W=W, b=b,
        n_support_cols=batch.n_support_cols,
        adam_wb=AdamState(lr=lr_w),
        adam_h=AdamState(lr=lr_h),
    )


def _residuals(H, W, B, gammas):
    out = []
    for w, b, g in zip(W, B, gammas):
        if w.shape[1] != H.shape[0] or g.shape[0] != w.shape[0] or g.shape[1] != H.shape[1]:
            raise DimMismatch(
                f"evaluator {w.shape} / latent {H.shape} / target {g.shape} disagree"
            )
        out.append(w @ H + b[:, None] - g)
    return out


def aggregation_loss(H, W, B, batch: AnchorBatch) -> float:
    """Sum over views of the squared Frobenius reconstruction error."""
    return float(sum(np.sum(r * r) for r in _residuals(H, W, B, batch.gammas)))


def aggregation_grads(H, W, B, batch: AnchorBatch):
    """Loss plus analytic gradients w.r.t. H, every W_v and every b_v."""
    residuals = _residuals(H, W, B, batch.gammas)
    loss = float(sum(np.sum(r * r) for r in residuals))
    g_w = [2.0 * r @ H.T for r in residuals]
    g_b = [2.0 * r.sum(axis=1) for r in residuals]
    g_h = np.zeros_like(H)
    for w, r in zip(W, residuals):
        g_h += 2.0 * w.T @ r
    return loss, g_h, g_w, g_b


def _grads_evaluator(H, W, B, gammas):
    """Gradients for the (W, b) group only; skips the latent gradient."""
    residuals = _residuals(H, W, B, gammas)
    g_w = [2.0 * r @ H.T for r in residuals]
    g_b = [2.0 * r.sum(axis=1) for r in residuals]
    return g_w, g_b


def _grad_latent(H, W, B, gammas):
    """Gradient for H only; skips the evaluator gradients."""
    residuals = _residuals(H, W, B, gammas)
    g_h = np.zeros_like(H)
    for w, r in zip(W, residuals):
        g_h += 2.0 * w.T @ r
    return g_h


def constraint_loss(h_support: np.ndarray, labels: np.ndarray, n_classes: int) -> float:
    return constraint_grads(h_support, labels, n_classes)[0]


def constraint_grads(h_support: np.ndarray, labels: np.ndarray, n_classes: int):
    """Label-constraint penalty over support anchors and its gradient.

    Each anchor's class-relation vector is the label-masked inner-product
    sum against the other anchors, scaled by |C|/(N-1); the penalty is the
    hinge between the max relation and the true class relation. Max ties
    resolve to the first attaining class; the hinge subgradient at zero
    is zero.
    """
    hs = h_support
    n = hs.shape[1]
    if n < 2:
        raise DimMismatch("need >= 2 support anchors")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape[0] != n:
        raise DimMismatch("labels length != support columns")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("labels outside 0..n_classes-1")

    beta = n_classes / (n - 1)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = 1.0
    class_sums = hs @ onehot  # (d, C)
    inner = class_sums.T @ hs  # (C, n): includes the self term
    self_sq = np.sum(hs * hs, axis=0)
    rel = beta * (inner - onehot.T * self_sq[None, :])

    top = rel.argmax(axis=0)  # first max on ties
    true_rel = rel[y, np.arange(n)]
    margins = rel[top, np.arange(n)] - true_rel
    loss = float(np.sum(np.maximum(margins, 0.0)))

    active = margins > 0.0
    coef = np.zeros((n_classes, n))
    idx = np.flatnonzero(active)
    np.add.at(coef, (top[idx], idx), 1.0)
    np.add.at(coef, (y[idx], idx), -1.0)

    term1 = (hs @ coef.T)[:, y]
    term2 = class_sums @ coef
    t_diag = coef[y, np.arange(n)]
    grad = beta * (term1 + term2 - 2.0 * hs * t_diag[None, :])
    return loss, grad


def evaluator_update(state: LatentState, batch: AnchorBatch, n_steps: int) -> LatentState:
    """Advance (W, b) by n_steps Adam steps on the reconstruction loss.

    H is read, never written.
    """
    n_views = len(state.W)
    for _ in range(n_steps):
        g_w, g_b = _grads_evaluator(state.H, state.W, state.b, batch.gammas)
        params, state.adam_wb = adam_step(state.W + state.b, g_w + g_b, state.adam_wb)
        state.W = params[:n_views]
        state.b = params[n_views:]
    return state


def latent_update(
    state: LatentState, batch: AnchorBatch, n_steps: int, use_constraint: bool = True
) -> LatentState:
    """Advance H by n_steps Adam steps on reconstruction + constraint.

    The constraint term touches only the support-anchor columns; W and b
    are read, never written.
    """
    ns = batch.n_support_cols
    for _ in range(n_steps):
        g_h = _grad_latent(state.H, state.W, state.b, batch.gammas)
        if use_constraint and ns >= 2:
            _, g_cst = constraint_grads(state.H[:, :ns], batch.labels, batch.n_classes)
            g_h[:, :ns] += g_cst
        (state.H,), state.adam_h = adam_step([state.H], [g_h], state.adam_h)
    return state


def run_inverse_aggregation(batch: AnchorBatch, config: AggregationConfig):
    """Alternate evaluator and latent updates; returns (state, trace).

    The trace records the reconstruction and constraint losses at the end
    of each outer iteration.
    """
    d = config.latent_dim if config.latent_dim is not None else max(batch.dims)
    state = init_latent(batch, d, config.seed, lr_w=config.lr_w, lr_h=config.lr_h)
    trace = AggregationTrace()
    for it in range(config.iters):
        state = evaluator_update(state, batch, config.n1)
        state = latent_update(state, batch, config.n2, use_constraint=config.use_constraint)
        l_agg = aggregation_loss(state.H, state.W, state.b, batch)
        if config.use_constraint and batch.n_support_cols >= 2:
            l_cst = constraint_loss(state.H[:, : batch.n_support_cols], batch.labels, batch.n_classes)
        else:
            l_cst = 0.0
        trace.records.append((it, l_agg, l_cst))
    return state, trace
