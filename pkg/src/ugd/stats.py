"""Per-class, per-view mean/covariance statistics of the base set."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FLOAT_FMT, DatasetManifest, MultiViewDataset, ViewSpec
from .errors import IncompleteBase, SchemaMismatch, TooFewSamples
from .rng import TAG_SUBSET, substream


@dataclass
class BaseStats:
    """Class-conditional Gaussian statistics for every view.

    means[c][v] has length d_v; covs[c][v] is d_v x d_v, symmetric PSD
    (covariances of few samples may be rank-deficient; ridging happens at
    sampling time, not here).
    """

    classes: tuple[int, ...]
    view_spec: ViewSpec
    means: dict  # class id -> list of per-view mean vectors
    covs: dict  # class id -> list of per-view covariance matrices
    _mean_stack: dict = field(default_factory=dict, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def mean_matrix(self, view: int) -> np.ndarray:
        """(n_classes, d_v) stack of class means, roster order. Cached."""
        if view not in self._mean_stack:
            self._mean_stack[view] = np.stack([self.means[c][view] for c in self.classes])
        return self._mean_stack[view]

    def subset(self, keep: int, seed: int) -> "BaseStats":
        """Randomly keep a subset of classes (base-pool size ablation)."""
        if not 1 <= keep <= self.n_classes:
            raise ValueError(f"keep={keep} outside 1..{self.n_classes}")
        rng = substream(seed, TAG_SUBSET)
        kept = sorted(rng.choice(np.array(self.classes), size=keep, replace=False).tolist())
        return BaseStats(
            classes=tuple(int(c) for c in kept),
            view_spec=self.view_spec,
            means={c: self.means[c] for c in kept},
            covs={c: self.covs[c] for c in kept},
        )


def compute_base_stats(dataset) -> BaseStats:
    """Unbiased per-class per-view mean and covariance of a complete pool.

    Accepts a MultiViewDataset or a sequence of complete MultiViewSample.
    Covariance uses the 1/(n-1) factor and is symmetrised by averaging
    with its transpose.
    """
    if not isinstance(dataset, MultiViewDataset):
        dataset = _pool_from_samples(list(dataset))
    spec = dataset.view_spec
    means: dict = {}
    covs: dict = {}
    for c in dataset.manifest.classes:
        rows = dataset.rows_of(c)
        means[c] = []
        covs[c] = []
        for v in range(spec.n_views):
            x = dataset.features[v][rows]
            if not np.all(np.isfinite(x)):
                raise IncompleteBase(f"class {c} view {v} has non-finite entries")
            n = x.shape[0]
            if n < 2:
                raise TooFewSamples(f"class {c} view {v}: {n} sample(s), need >= 2")
            mu = x.mean(axis=0)
            centered = x - mu
            sigma = centered.T @ centered / (n - 1)
            sigma = 0.5 * (sigma + sigma.T)
            means[c].append(mu)
            covs[c].append(sigma)
    return BaseStats(
        classes=dataset.manifest.classes, view_spec=spec, means=means, covs=covs
    )


def _pool_from_samples(samples) -> MultiViewDataset:
    """Assemble a dense pool from labelled complete samples."""
    if not samples:
        raise TooFewSamples("no base samples")
    for i, s in enumerate(samples):
        if not all(s.mask):
            raise IncompleteBase(f"base sample {i} has a missing view")
        if s.label is None:
            raise IncompleteBase(f"base sample {i} has no label")
    dims = tuple(x.shape[0] for x in samples[0].views)
    spec = ViewSpec(dims=dims)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    classes = tuple(sorted(set(labels.tolist())))
    features = [np.stack([s.views[v] for s in samples]) for v in range(spec.n_views)]
    manifest = DatasetManifest(
        classes=classes,
        counts=tuple((c, int(np.sum(labels == c))) for c in classes),
        view_spec=spec,
        role="base",
    )
    return MultiViewDataset(manifest=manifest, features=features, labels=labels)


# ---------------------------------------------------------------------------
# persistence: directory with index.json plus one CSV per matrix
# ---------------------------------------------------------------------------


def save_stats(stats: BaseStats, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict = {}
    for c in stats.classes:
        files[str(c)] = {}
        for v in range(stats.view_spec.n_views):
            mean_name = f"mean_c{c}_v{v}.csv"
            cov_name = f"cov_c{c}_v{v}.csv"
            np.savetxt(out / mean_name, stats.means[c][v][None, :], fmt=FLOAT_FMT, delimiter=",")
            np.savetxt(out / cov_name, stats.covs[c][v], fmt=FLOAT_FMT, delimiter=",")
            files[str(c)][str(v)] = {"mean": mean_name, "cov": cov_name}
    index = {
        "classes": [int(c) for c in stats.classes],
        "dims": [int(d) for d in stats.view_spec.dims],
        "files": files,
    }
    path = out / "index.json"
    path.write_text(json.dumps(index, indent=2))
    return path


def load_stats(stats_dir, expect_view_spec: ViewSpec | None = None) -> BaseStats:
    out = Path(stats_dir)
    index_path = out / "index.json" if out.is_dir() else out
    if not index_path.exists():
        raise SchemaMismatch(f"stats index not found: {index_path}")
    try:
        index = json.loads(index_path.read_text())
        classes = tuple(int(c) for c in index["classes"])
        dims = tuple(int(d) for d in index["dims"])
        files = index["files"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise SchemaMismatch(f"stats index {index_path} is malformed: {e}") from e
    view_spec = ViewSpec(dims=dims)
    if expect_view_spec is not None and view_spec != expect_view_spec:
        raise SchemaMismatch(
            f"stats bundle has dims {dims}, pipeline expects {expect_view_spec.dims}"
        )
    base = index_path.parent
    means: dict = {}
    covs: dict = {}
    for c in classes:
        means[c] = []
        covs[c] = []
        for v in range(view_spec.n_views):
            try:
                entry = files[str(c)][str(v)]
            except KeyError as e:
                raise SchemaMismatch(f"stats index lacks entry for class {c} view {v}") from e
            mu = np.loadtxt(base / entry["mean"], delimiter=",", ndmin=2)
            sigma = np.loadtxt(base / entry["cov"], delimiter=",", ndmin=2)
            if mu.shape != (1, dims[v]):
                raise SchemaMismatch(f"{entry['mean']}: shape {mu.shape} != (1, {dims[v]})")
            if sigma.shape != (dims[v], dims[v]):
                raise SchemaMismatch(f"{entry['cov']}: shape {sigma.shape} != square dim {dims[v]}")
            means[c].append(mu[0])
            covs[c].append(sigma)
    return BaseStats(classes=classes, view_spec=view_spec, means=means, covs=covs)
