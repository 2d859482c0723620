"""Per-sample view-distribution estimation and dense anchor sampling.

For each support or query sample: measure distances of the available views
to the base class means, retrieve the union of per-view top-k nearest base
classes, and form a Gaussian per view whose mean blends the retrieved base
means with the observation (available views) or averages them (missing
views), with the covariance averaged over the retrieved classes. Supports
are then densified by sampling anchors from these Gaussians; query missing
views are filled with the distribution center.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Episode, MultiViewSample
from .errors import (
    DimMismatch,
    EmptyRetrieval,
    FactorizationFailure,
    NoAvailableView,
)
from .rng import TAG_ANCHOR, substream
from .stats import BaseStats


@dataclass(frozen=True)
class ViewDistribution:
    """Gaussian parameters per view, defined for missing views too."""

    means: tuple  # view -> (d_v,)
    covs: tuple  # view -> (d_v, d_v)


@dataclass(frozen=True)
class RetrievalSet:
    """Union of per-view nearest base classes, ascending class id."""

    class_ids: tuple[int, ...]
    tables: tuple  # view -> (n_base,) distances, or None for missing views

    def __post_init__(self):
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ValueError("duplicate ids in retrieval set")


@dataclass(frozen=True)
class AnchorBatch:
    """Per-view anchor matrices with support anchors first, then queries.

    gammas[v] is d_v x (n_support * n_per_support + n_query); labels are
    roster indices for the support-anchor columns only.
    """

    gammas: tuple  # view -> (d_v, total_cols)
    labels: np.ndarray  # (n_support * n_per_support,)
    n_support: int
    n_per_support: int
    n_query: int
    n_classes: int

    @property
    def n_support_cols(self) -> int:
        return self.n_support * self.n_per_support

    @property
    def n_cols(self) -> int:
        return self.n_support_cols + self.n_query

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(g.shape[0] for g in self.gammas)


def view_distances(sample: MultiViewSample, stats: BaseStats) -> list:
    """Euclidean distances of each available view to all base class means.

    Missing views yield None (the distance calculation is skipped).
    """
    sample.check_dims(stats.view_spec)
    tables = []
    for v in range(stats.view_spec.n_views):
        if not sample.mask[v]:
            tables.append(None)
            continue
        diff = stats.mean_matrix(v) - sample.views[v][None, :]
        tables.append(np.sqrt(np.sum(diff * diff, axis=1)))
    return tables


def retrieve_topk(tables, class_ids, k: int) -> RetrievalSet:
    """Union over views of the k nearest base classes per available view.

    Ties break toward the smaller class id; the result is in ascending id
    order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = np.asarray(class_ids, dtype=np.int64)
    if ids.shape[0] < k:
        raise ValueError(f"k={k} exceeds {ids.shape[0]} base classes")
    chosen: set[int] = set()
    any_view = False
    for table in tables:
        if table is None or len(table) == 0:
            continue
        any_view = True
        if len(table) != ids.shape[0]:
            raise DimMismatch("distance table length != number of base classes")
        order = np.lexsort((ids, np.asarray(table)))
        chosen.update(int(ids[i]) for i in order[:k])
    if not any_view:
        raise NoAvailableView("sample has no available view to retrieve from")
    return RetrievalSet(class_ids=tuple(sorted(chosen)), tables=tuple(tables))


def estimate_distribution(
    sample: MultiViewSample, stats: BaseStats, retrieval: RetrievalSet
) -> ViewDistribution:
    """Gaussian per view from the retrieved base statistics.

    Available view: mean = (sum of retrieved base means + observation) /
    (n_retrieved + 1). Missing view: mean of retrieved base means. The
    covariance is the mean of retrieved base covariances either way.
    """
    ids = retrieval.class_ids
    if len(ids) == 0:
        raise EmptyRetrieval("retrieval set is empty")
    n_j = len(ids)
    means = []
    covs = []
    for v in range(stats.view_spec.n_views):
        base_sum = np.sum([stats.means[c][v] for c in ids], axis=0)
        if sample.mask[v]:
            mu = (base_sum + sample.views[v]) / (n_j + 1)
        else:
            mu = base_sum / n_j
        sigma = np.mean([stats.covs[c][v] for c in ids], axis=0)
        means.append(mu)
        covs.append(sigma)
    return ViewDistribution(means=tuple(means), covs=tuple(covs))


def adaptive_ridge(cov: np.ndarray) -> float:
    """Default jitter: 1e-6 * (mean diagonal + 1), covers rank-deficient
    covariances estimated from few base samples."""
    d = cov.shape[0]
    return 1e-6 * (float(np.trace(cov)) / d + 1.0)


def _factor(cov: np.ndarray, ridge: float) -> np.ndarray:
    """Lower-triangular-ish factor L with L L^T = cov + ridge I.

    Cholesky first; on failure fall back to an eigendecomposition with
    negative eigenvalues clamped to zero.
    """
    ridged = cov + ridge * np.eye(cov.shape[0])
    try:
        return np.linalg.cholesky(ridged)
    except np.linalg.LinAlgError:
        pass
    try:
        w, q = np.linalg.eigh(ridged)
    except np.linalg.LinAlgError as e:
        raise FactorizationFailure(f"eigendecomposition failed: {e}") from e
    if not np.all(np.isfinite(w)) or not np.all(np.isfinite(q)):
        raise FactorizationFailure("non-finite eigendecomposition of ridged covariance")
    w = np.clip(w, 0.0, None)
    return q * np.sqrt(w)[None, :]


def sample_support_anchors(
    dist: ViewDistribution, n_anchors: int, ridge: float | None, seed
) -> list:
    """Draw n_anchors i.i.d. samples per view from N(mu_v, cov_v + eps I).

    Returns a list of (d_v, n_anchors) arrays. ``ridge=None`` selects the
    adaptive default. ``seed`` may be an int or a tuple of ints; each view
    uses its own substream so draws are order-independent across views.
    """
    if n_anchors < 1:
        raise ValueError("n_anchors must be >= 1")
    path = (seed,) if isinstance(seed, (int, np.integer)) else tuple(seed)
    out = []
    for v, (mu, cov) in enumerate(zip(dist.means, dist.covs)):
        eps = adaptive_ridge(cov) if ridge is None else float(ridge)
        if eps <= 0:
            raise ValueError("ridge must be positive")
        factor = _factor(cov, eps)
        rng = substream(path[0], *path[1:], TAG_ANCHOR, v)
        z = rng.standard_normal((cov.shape[0], n_anchors))
        out.append(mu[:, None] + factor @ z)
    return out


def complete_query_views(sample: MultiViewSample, dist: ViewDistribution) -> MultiViewSample:
    """Fill missing views with the estimated center; available views pass
    through unchanged. Idempotent."""
    views = tuple(
        sample.views[v] if sample.mask[v] else np.array(dist.means[v], dtype=float)
        for v in range(sample.n_views)
    )
    return MultiViewSample(views=views, mask=(True,) * sample.n_views, label=sample.label)


def estimate_for_sample(sample: MultiViewSample, stats: BaseStats, k: int) -> ViewDistribution:
    """Distance -> top-k retrieval -> distribution, in one step."""
    tables = view_distances(sample, stats)
    retrieval = retrieve_topk(tables, stats.classes, k)
    return estimate_distribution(sample, stats, retrieval)


def build_anchor_batch(
    episode: Episode, stats: BaseStats, k: int, n_per_support: int,
    ridge: float | None, seed: int,
) -> AnchorBatch:
    """Assemble the per-view anchor matrices for one episode.

    Column layout: n_per_support anchors per support sample in support
    order, then one column per query (available views raw, missing views
    interpolated at the estimated center). Anchor columns inherit their
    support sample's label.
    """
    spec = episode.view_spec
    n_s, n_q = episode.n_support, episode.n_query
    cols = n_s * n_per_support + n_q
    gammas = [np.empty((d, cols)) for d in spec.dims]
    targets = episode.support_targets()
    labels = np.repeat(targets, n_per_support)

    for i, s in enumerate(episode.support):
        dist = estimate_for_sample(s, stats, k)
        anchors = sample_support_anchors(dist, n_per_support, ridge, (seed, i))
        sl = slice(i * n_per_support, (i + 1) * n_per_support)
        for v in range(spec.n_views):
            gammas[v][:, sl] = anchors[v]

    for j, q in enumerate(episode.query):
        dist = estimate_for_sample(q, stats, k)
        filled = complete_query_views(q, dist)
        col = n_s * n_per_support + j
        for v in range(spec.n_views):
            gammas[v][:, col] = filled.views[v]

    return AnchorBatch(
        gammas=tuple(gammas),
        labels=labels,
        n_support=n_s,
        n_per_support=n_per_support,
        n_query=n_q,
        n_classes=episode.n_ways,
    )
