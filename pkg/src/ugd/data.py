"""Incomplete multi-view data model.

Holds the sample/episode types, the view-missing simulator, a synthetic
dataset generator, and the CSV+JSON feature container used to exchange
features with external extractors.

Container layout: one headerless CSV per view (row i of every view file is
sample i), a labels file with one class id per line, and a manifest JSON
naming them. All types are immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimMismatch, InfeasibleEta, InsufficientPool, SchemaMismatch
from .rng import TAG_DATASET, substream

# Floats survive a text round trip at 17 significant digits.
FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class ViewSpec:
    """Number of views and per-view feature dimensions."""

    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if len(self.dims) < 1:
            raise ValueError("need at least one view")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"view dims must be positive, got {self.dims}")

    @property
    def n_views(self) -> int:
        return len(self.dims)


@dataclass(frozen=True)
class MultiViewSample:
    """One sample: per-view feature vectors, availability mask, optional label.

    ``views[v]`` is present exactly when ``mask[v]`` is true, and at least
    one view must be available.
    """

    views: tuple
    mask: tuple[bool, ...]
    label: int | None = None

    def __post_init__(self):
        views = tuple(None if v is None else np.asarray(v, dtype=float) for v in self.views)
        mask = tuple(bool(m) for m in self.mask)
        if len(views) != len(mask):
            raise ValueError("views and mask lengths differ")
        for v, (x, m) in enumerate(zip(views, mask)):
            if m != (x is not None):
                raise ValueError(f"view {v}: mask={m} but vector {'missing' if x is None else 'present'}")
        if not any(mask):
            raise ValueError("sample has no available view")
        object.__setattr__(self, "views", views)
        object.__setattr__(self, "mask", mask)

    @property
    def n_views(self) -> int:
        return len(self.mask)

    def check_dims(self, view_spec: ViewSpec) -> None:
        if self.n_views != view_spec.n_views:
            raise DimMismatch(f"sample has {self.n_views} views, spec has {view_spec.n_views}")
        for v, x in enumerate(self.views):
            if x is not None and x.shape != (view_spec.dims[v],):
                raise DimMismatch(f"view {v}: got shape {x.shape}, expected ({view_spec.dims[v]},)")


@dataclass(frozen=True)
class Episode:
    """One few-shot task: labelled supports plus unlabelled queries.

    Query labels are carried only in a separate store and exposed through
    :meth:`query_labels_eval`; nothing in the pipeline should touch them.
    """

    classes: tuple[int, ...]
    shots: int
    support: tuple[MultiViewSample, ...]
    query: tuple[MultiViewSample, ...]
    _query_labels: tuple[int, ...]
    view_spec: ViewSpec
    seed: int

    def __post_init__(self):
        if len(self.support) != len(self.classes) * self.shots:
            raise ValueError("support size != |C| * K")
        if len(self._query_labels) != len(self.query):
            raise ValueError("query label store misaligned")
        counts = {c: 0 for c in self.classes}
        for s in self.support:
            if s.label not in counts:
                raise ValueError(f"support label {s.label} not in roster")
            counts[s.label] += 1
        if any(n != self.shots for n in counts.values()):
            raise ValueError(f"per-class support counts {counts} != shots {self.shots}")
        for s in self.support + self.query:
            s.check_dims(self.view_spec)
        for q in self.query:
            if q.label is not None:
                raise ValueError("query samples must not carry labels")
        for y in self._query_labels:
            if y not in counts:
                raise ValueError(f"query label {y} not in roster")

    @property
    def n_support(self) -> int:
        return len(self.support)

    @property
    def n_query(self) -> int:
        return len(self.query)

    @property
    def n_ways(self) -> int:
        return len(self.classes)

    def support_targets(self) -> np.ndarray:
        """Support labels as roster indices 0..|C|-1."""
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[s.label] for s in self.support], dtype=np.int64)

    def query_labels_eval(self) -> np.ndarray:
        """Held-out query labels as roster indices. Scoring only."""
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([index[y] for y in self._query_labels], dtype=np.int64)

    def all_samples(self) -> tuple[MultiViewSample, ...]:
        return self.support + self.query


@dataclass(frozen=True)
class DatasetManifest:
    """Descriptor of one feature container (base or novel pool)."""

    classes: tuple[int, ...]
    counts: tuple[tuple[int, int], ...]  # (class id, sample count), roster order
    view_spec: ViewSpec
    role: str  # "base" | "novel"
    view_paths: tuple[str, ...] | None = None
    labels_path: str | None = None

    def count_of(self, cls: int) -> int:
        return dict(self.counts)[cls]


@dataclass
class MultiViewDataset:
    """In-memory pool: per-view feature matrices plus row-aligned labels."""

    manifest: DatasetManifest
    features: list[np.ndarray]  # view v -> (n, d_v)
    labels: np.ndarray  # (n,)
    _by_class: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        n = self.labels.shape[0]
        for v, x in enumerate(self.features):
            if x.shape != (n, self.manifest.view_spec.dims[v]):
                raise SchemaMismatch(
                    f"view {v}: feature table {x.shape} vs "
                    f"{n} rows x dim {self.manifest.view_spec.dims[v]}"
                )
        if not self._by_class:
            self._by_class = {
                c: np.flatnonzero(self.labels == c) for c in self.manifest.classes
            }

    @property
    def n_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def view_spec(self) -> ViewSpec:
        return self.manifest.view_spec

    def rows_of(self, cls: int) -> np.ndarray:
        return self._by_class[cls]

    def sample(self, row: int) -> MultiViewSample:
        """Complete sample at a given row."""
        views = tuple(x[row].copy() for x in self.features)
        return MultiViewSample(views=views, mask=(True,) * len(views), label=int(self.labels[row]))


# ---------------------------------------------------------------------------
# view-missing simulation
# ---------------------------------------------------------------------------


def missing_rate_of_masks(masks: np.ndarray) -> float:
    """Missing fraction of a raw (n_samples, n_views) boolean mask matrix."""
    masks = np.asarray(masks, dtype=bool)
    return 1.0 - masks.sum() / masks.size


def missing_rate(episode: Episode) -> float:
    """Fraction of absent (sample, view) slots over support and query."""
    masks = np.array([s.mask for s in episode.all_samples()], dtype=bool)
    return missing_rate_of_masks(masks)


def apply_view_missing(episode: Episode, target_eta: float, seed: int) -> Episode:
    """Mask views of a complete episode to hit a target missing rate.

    Exactly round(eta * slots) entries go missing (round half to even).
    Two-phase assignment keeps one view per sample: first reserve one kept
    view per sample uniformly at random, then mask a uniform subset of the
    remaining slots.
    """
    n_views = episode.view_spec.n_views
    feasible = (n_views - 1) / n_views
    if not 0.0 <= target_eta <= feasible + 1e-12:
        raise InfeasibleEta(f"eta={target_eta} outside [0, {feasible}] for V={n_views}")
    samples = episode.all_samples()
    for s in samples:
        if not all(s.mask):
            raise ValueError("apply_view_missing expects a complete episode")

    n_samples = len(samples)
    total = n_samples * n_views
    n_missing = int(round(target_eta * total))
    n_missing = min(n_missing, n_samples * (n_views - 1))
    if n_missing == 0:
        return episode

    rng = substream(seed)
    keep = rng.integers(0, n_views, size=n_samples)
    candidates = np.array(
        [(i, v) for i in range(n_samples) for v in range(n_views) if v != keep[i]],
        dtype=np.int64,
    )
    chosen = rng.choice(len(candidates), size=n_missing, replace=False)
    masked = set(map(tuple, candidates[chosen]))

    def strip(i: int, s: MultiViewSample, keep_label: bool) -> MultiViewSample:
        views = tuple(
            None if (i, v) in masked else s.views[v] for v in range(n_views)
        )
        mask = tuple(x is not None for x in views)
        return MultiViewSample(views=views, mask=mask, label=s.label if keep_label else None)

    new_support = tuple(strip(i, s, True) for i, s in enumerate(episode.support))
    new_query = tuple(
        strip(episode.n_support + j, q, False) for j, q in enumerate(episode.query)
    )
    return Episode(
        classes=episode.classes,
        shots=episode.shots,
        support=new_support,
        query=new_query,
        _query_labels=episode._query_labels,
        view_spec=episode.view_spec,
        seed=episode.seed,
    )


def sample_episode(
    pool: MultiViewDataset, c_size: int, k: int, n_q_per_class: int, seed: int
) -> Episode:
    """Draw a |C|-way K-shot episode with complete views from a pool."""
    classes = pool.manifest.classes
    if len(classes) < c_size:
        raise InsufficientPool(f"pool has {len(classes)} classes, need {c_size}")
    need = k + n_q_per_class
    rng = substream(seed)
    roster = tuple(int(c) for c in rng.choice(np.array(classes), size=c_size, replace=False))
    for c in roster:
        if pool.rows_of(c).shape[0] < need:
            raise InsufficientPool(
                f"class {c} has {pool.rows_of(c).shape[0]} samples, need {need}"
            )
    support, query, q_labels = [], [], []
    for c in roster:
        rows = pool.rows_of(c)
        picked = rng.choice(rows, size=need, replace=False)
        for r in picked[:k]:
            support.append(pool.sample(int(r)))
        for r in picked[k:]:
            s = pool.sample(int(r))
            query.append(MultiViewSample(views=s.views, mask=s.mask, label=None))
            q_labels.append(c)
    return Episode(
        classes=roster,
        shots=k,
        support=tuple(support),
        query=tuple(query),
        _query_labels=tuple(q_labels),
        view_spec=pool.view_spec,
        seed=seed,
    )


def episode_fingerprint(episode: Episode) -> str:
    """Content hash used to assert that two runs saw the same episode."""
    h = hashlib.sha256()
    h.update(repr(episode.classes).encode())
    h.update(repr(episode.shots).encode())
    for s in episode.all_samples():
        h.update(repr(s.mask).encode())
        h.update(repr(s.label).encode())
        for x in s.views:
            if x is not None:
                h.update(x.tobytes())
    h.update(repr(episode._query_labels).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def _view_render_map(d_latent: int, d_view: int, view: int) -> np.ndarray:
    """Fixed orthonormal rendering of class content into one view's space.

    The map depends only on (latent dim, view dim, view index), never on a
    dataset seed, so base and novel pools generated separately still share
    the same cross-view geometry.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x56494557, d_latent, d_view, view]))
    a = rng.standard_normal((d_latent, d_latent))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))[None, :]
    return q[:d_view]


def gen_synthetic_dataset(
    n_classes: int,
    per_class: int,
    view_spec: ViewSpec,
    sep_scale: float,
    noise_scale: float,
    seed: int,
    role: str = "novel",
    class_id_offset: int = 0,
) -> MultiViewDataset:
    """Gaussian blobs with class content shared across views.

    Each class draws one latent content vector with i.i.d. N(0, s^2)
    entries; view v's class center is a fixed orthonormal rendering of
    that content, so every per-view center is marginally N(0, s^2 I_{d_v})
    while all views of a class carry the same underlying signal. Samples
    add independent N(0, sigma_w^2 I) noise per view.
    """
    if n_classes < 1 or per_class < 1:
        raise ValueError("counts must be positive")
    rng = substream(seed, TAG_DATASET)
    classes = tuple(range(class_id_offset, class_id_offset + n_classes))
    d_latent = max(view_spec.dims)
    renders = [_view_render_map(d_latent, d, v) for v, d in enumerate(view_spec.dims)]
    features = [np.empty((n_classes * per_class, d)) for d in view_spec.dims]
    labels = np.repeat(np.array(classes, dtype=np.int64), per_class)
    for ci in range(n_classes):
        content = sep_scale * rng.standard_normal(d_latent)
        rows = slice(ci * per_class, (ci + 1) * per_class)
        for v, d in enumerate(view_spec.dims):
            noise = noise_scale * rng.standard_normal((per_class, d))
            features[v][rows] = (renders[v] @ content)[None, :] + noise
    manifest = DatasetManifest(
        classes=classes,
        counts=tuple((c, per_class) for c in classes),
        view_spec=view_spec,
        role=role,
    )
    return MultiViewDataset(manifest=manifest, features=features, labels=labels)


# ---------------------------------------------------------------------------
# container I/O
# ---------------------------------------------------------------------------


def save_dataset(dataset: MultiViewDataset, out_dir) -> Path:
    """Write the CSV+JSON feature container; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    view_names = []
    for v, x in enumerate(dataset.features):
        name = f"view_{v}.csv"
        np.savetxt(out / name, x, fmt=FLOAT_FMT, delimiter=",")
        view_names.append(name)
    labels_name = "labels.csv"
    np.savetxt(out / labels_name, dataset.labels, fmt="%d")
    manifest = {
        "views": [
            {"path": name, "dim": int(d)}
            for name, d in zip(view_names, dataset.view_spec.dims)
        ],
        "labels_path": labels_name,
        "classes": [int(c) for c in dataset.manifest.classes],
        "role": dataset.manifest.role,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_features(manifest_path) -> MultiViewDataset:
    """Load a feature container, validating shapes against the manifest."""
    path = Path(manifest_path)
    if not path.exists():
        raise SchemaMismatch(f"manifest not found: {path}")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise SchemaMismatch(f"manifest {path} is not valid JSON: {e}") from e
    for key in ("views", "labels_path", "classes", "role"):
        if key not in spec:
            raise SchemaMismatch(f"manifest {path} lacks key '{key}'")
    base = path.parent
    dims = tuple(int(v["dim"]) for v in spec["views"])
    view_spec = ViewSpec(dims=dims)

    labels_file = base / spec["labels_path"]
    if not labels_file.exists():
        raise SchemaMismatch(f"labels file missing: {labels_file}")
    raw = [line.strip() for line in labels_file.read_text().splitlines() if line.strip()]
    try:
        labels = np.array([int(tok) for tok in raw], dtype=np.int64)
    except ValueError as e:
        raise SchemaMismatch(f"labels file {labels_file}: {e}") from e
    declared = set(int(c) for c in spec["classes"])
    unknown = set(labels.tolist()) - declared
    if unknown:
        raise SchemaMismatch(f"labels file {labels_file} has undeclared class ids {sorted(unknown)}")

    features = []
    for v, entry in enumerate(spec["views"]):
        f = base / entry["path"]
        if not f.exists():
            raise SchemaMismatch(f"view file missing: {f}")
        x = np.loadtxt(f, delimiter=",", ndmin=2)
        if x.shape[1] != dims[v]:
            raise SchemaMismatch(f"{f}: {x.shape[1]} columns, manifest says {dims[v]}")
        if x.shape[0] != labels.shape[0]:
            raise SchemaMismatch(f"{f}: {x.shape[0]} rows, labels file has {labels.shape[0]}")
        features.append(x)

    classes = tuple(int(c) for c in spec["classes"])
    counts = tuple((c, int(np.sum(labels == c))) for c in classes)
    manifest = DatasetManifest(
        classes=classes,
        counts=counts,
        view_spec=view_spec,
        role=str(spec["role"]),
        view_paths=tuple(str(base / v["path"]) for v in spec["views"]),
        labels_path=str(labels_file),
    )
    return MultiViewDataset(manifest=manifest, features=features, labels=labels)
