"""End-to-end experiment harness.

A single JSON-friendly config drives everything: dataset source, episode
shape, missing-rate grid, method list, hyperparameters, ablation flags.
Episode seeds are derived from (master seed, eta, episode index) only, so
every method sees the same episodes at a sweep point and adding a method
never perturbs the others.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .aggregate import AggregationConfig, run_inverse_aggregation
from .classify import build_classifier, match_baseline, predict_batch, proto_baseline
from .data import (
    Episode,
    MultiViewDataset,
    ViewSpec,
    apply_view_missing,
    gen_synthetic_dataset,
    load_features,
    sample_episode,
)
from .errors import ConfigError, InfeasibleEta, RuntimeFailure
from .estimate import build_anchor_batch
from .rectify import RectifyConfig, rectify
from .rng import TAG_EPISODE, TAG_MISSING, key_of
from .stats import BaseStats, compute_base_stats

METHODS = ("ugd", "proto", "match")


@dataclass
class ExperimentConfig:
    methods: tuple = ("ugd",)
    ways: int = 5
    shots: int = 1
    queries_per_class: int = 15
    etas: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    episodes: int = 400
    # distribution estimation
    k: int = 2
    n_gamma: int = 60
    ridge: float | None = None  # None -> adaptive
    # inverse aggregation
    latent_dim: int | None = None  # None -> max view dim
    iters: int = 30
    n1: int = 10
    n2: int = 10
    lr_w: float = 1e-2
    lr_h: float = 1e-2
    # self-rectification
    lam: float = 0.1
    temperature: float = 0.5
    ds_iters: int = 1000
    ds_lr: float = 1e-4
    # ablation switches
    no_ds: bool = False
    no_ce: bool = False
    no_se: bool = False
    no_iaa: bool = False
    no_cst: bool = False
    # data source: {"synthetic": {...}} or {"base_manifest": ..., "novel_manifest": ...}
    dataset: dict = field(default_factory=dict)
    base_class_subset: int | None = None
    seed: int = 0
    jobs: int = 1
    record_timing: bool = True
    episode_timeout_s: float | None = None

    def __post_init__(self):
        if isinstance(self.methods, str):
            self.methods = (self.methods,)
        self.methods = tuple(self.methods)
        self.etas = tuple(float(e) for e in self.etas)

    def validate(self) -> None:
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method '{m}', expected one of {METHODS}")
        if not self.methods:
            raise ConfigError("no methods configured")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.ways < 2:
            raise ConfigError("ways must be >= 2")
        if self.shots < 1 or self.queries_per_class < 1:
            raise ConfigError("shots and queries_per_class must be >= 1")
        if not self.dataset:
            raise ConfigError("config has no dataset source")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        if "method" in raw:  # accept singular form
            raw["methods"] = raw.pop("method")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**raw)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> dict:
        d = asdict(self)
        # normalise containers the way JSON would, so round trips compare equal
        return json.loads(json.dumps(d))


SYNTH_KEYS = {
    "base_classes": 20,
    "novel_classes": 10,
    "base_per_class": 50,
    "novel_per_class": 50,
    "dims": (32, 32, 32),
    "sep_scale": 3.0,
    "noise_scale": 1.0,
}


def build_pools(config: ExperimentConfig):
    """Materialise (base pool, novel pool) from the config's data source."""
    src = config.dataset
    if "synthetic" in src:
        spec = dict(SYNTH_KEYS)
        unknown = set(src["synthetic"]) - set(spec)
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {sorted(unknown)}")
        spec.update(src["synthetic"])
        view_spec = ViewSpec(dims=tuple(spec["dims"]))
        base = gen_synthetic_dataset(
            spec["base_classes"], spec["base_per_class"], view_spec,
            spec["sep_scale"], spec["noise_scale"],
            seed=key_of(config.seed, 11), role="base",
        )
        novel = gen_synthetic_dataset(
            spec["novel_classes"], spec["novel_per_class"], view_spec,
            spec["sep_scale"], spec["noise_scale"],
            seed=key_of(config.seed, 12), role="novel",
            class_id_offset=spec["base_classes"],
        )
        return base, novel
    if "base_manifest" in src and "novel_manifest" in src:
        return load_features(src["base_manifest"]), load_features(src["novel_manifest"])
    raise ConfigError(
        "dataset must contain 'synthetic' or both 'base_manifest' and 'novel_manifest'"
    )


def check_etas(config: ExperimentConfig, view_spec: ViewSpec) -> None:
    bound = (view_spec.n_views - 1) / view_spec.n_views
    for eta in config.etas:
        if not 0.0 <= eta <= bound + 1e-12:
            raise InfeasibleEta(f"eta={eta} infeasible for V={view_spec.n_views}")


def _eta_key(eta: float) -> int:
    return int(round(eta * 10**9))


def make_episode(config: ExperimentConfig, pool: MultiViewDataset, eta: float, index: int) -> Episode:
    """Episode index -> episode; identical for every method."""
    ek = _eta_key(eta)
    episode = sample_episode(
        pool, config.ways, config.shots, config.queries_per_class,
        seed=key_of(config.seed, TAG_EPISODE, ek, index),
    )
    if eta > 0.0:
        episode = apply_view_missing(
            episode, eta, seed=key_of(config.seed, TAG_MISSING, ek, index)
        )
    return episode


@dataclass
class EpisodeResult:
    accuracy: float
    agg_trace: object = None
    ds_trace: list | None = None


def _concat_anchor_views(batch):
    """IAA-ablated unification: stack the per-view anchor matrices."""
    return np.concatenate(batch.gammas, axis=0)


def _accuracy(preds, truth) -> float:
    return float(np.mean(np.array([p.label for p in preds]) == truth))


def run_episode(config: ExperimentConfig, episode: Episode, stats: BaseStats,
                method: str | None = None) -> EpisodeResult:
    """Run one method on one episode; returns accuracy against the held-out
    query labels, honoring the ablation flags."""
    method = method or config.methods[0]
    start = time.perf_counter()
    truth = episode.query_labels_eval()
    if method == "proto":
        preds = proto_baseline(episode)
        result = EpisodeResult(accuracy=_accuracy(preds, truth))
    elif method == "match":
        preds = match_baseline(episode)
        result = EpisodeResult(accuracy=_accuracy(preds, truth))
    elif method == "ugd":
        result = _run_ugd(config, episode, stats, truth)
    else:
        raise ConfigError(f"unknown method '{method}'")
    if config.episode_timeout_s is not None:
        elapsed = time.perf_counter() - start
        if elapsed > config.episode_timeout_s:
            raise RuntimeFailure(
                f"episode took {elapsed:.1f}s, over the {config.episode_timeout_s}s budget"
            )
    return result


def _run_ugd(config, episode, stats, truth) -> EpisodeResult:
    batch = build_anchor_batch(
        episode, stats, k=config.k, n_per_support=config.n_gamma,
        ridge=config.ridge, seed=episode.seed,
    )
    agg_trace = None
    if config.no_iaa:
        unified = _concat_anchor_views(batch)
        h_support = unified[:, : batch.n_support_cols]
        h_query = unified[:, batch.n_support_cols :]
    else:
        agg_config = AggregationConfig(
            latent_dim=config.latent_dim, iters=config.iters,
            n1=config.n1, n2=config.n2, lr_w=config.lr_w, lr_h=config.lr_h,
            use_constraint=not config.no_cst, seed=episode.seed,
        )
        state, agg_trace = run_inverse_aggregation(batch, agg_config)
        h_support = state.support_latent
        h_query = state.query_latent

    ds_trace = None
    if config.no_ds:
        anchors = h_support
    else:
        rect = rectify(
            h_support, h_query, batch.labels,
            RectifyConfig(
                lam=config.lam, temperature=config.temperature,
                iters=config.ds_iters, lr=config.ds_lr,
                use_ce=not config.no_ce, use_se=not config.no_se,
            ),
            n_classes=batch.n_classes,
        )
        anchors = rect.rectified_anchors
        ds_trace = rect.trace

    classifier = build_classifier(
        anchors, batch.labels, config.temperature, n_classes=batch.n_classes
    )
    preds = predict_batch(classifier, h_query)
    return EpisodeResult(accuracy=_accuracy(preds, truth), agg_trace=agg_trace, ds_trace=ds_trace)


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepPoint:
    method: str
    eta: float
    mean_acc: float
    std: float
    n_episodes: int
    seconds: float


@dataclass
class SweepResult:
    points: tuple  # of SweepPoint
    config: dict
    per_episode: dict = field(default_factory=dict, compare=False)  # (method, eta) -> [acc]


_WORKER = {}


def _init_worker(config_dict, novel, stats):
    _WORKER["config"] = ExperimentConfig.from_dict(config_dict)
    _WORKER["novel"] = novel
    _WORKER["stats"] = stats


def _episode_task(args):
    eta, index = args
    config, novel, stats = _WORKER["config"], _WORKER["novel"], _WORKER["stats"]
    episode = make_episode(config, novel, eta, index)
    accs, secs = {}, {}
    for method in config.methods:
        t0 = time.perf_counter()
        accs[method] = run_episode(config, episode, stats, method).accuracy
        secs[method] = time.perf_counter() - t0
    return accs, secs


def prepare_stats(config: ExperimentConfig, base: MultiViewDataset) -> BaseStats:
    stats = compute_base_stats(base)
    if config.base_class_subset is not None:
        stats = stats.subset(config.base_class_subset, seed=config.seed)
    return stats


def run_sweep(config: ExperimentConfig, pools=None, stats: BaseStats | None = None) -> SweepResult:
    """Run every (method, eta) point; deterministic for a fixed config."""
    config.validate()
    if pools is None:
        pools = build_pools(config)
    base, novel = pools
    if base.view_spec != novel.view_spec:
        raise ConfigError("base and novel pools disagree on view dims")
    check_etas(config, novel.view_spec)
    if stats is None:
        stats = prepare_stats(config, base)

    tasks = [(eta, i) for eta in config.etas for i in range(config.episodes)]
    if config.jobs > 1:
        with ProcessPoolExecutor(
            max_workers=config.jobs,
            initializer=_init_worker,
            initargs=(config.to_dict(), novel, stats),
        ) as pool:
            outcomes = list(pool.map(_episode_task, tasks, chunksize=8))
    else:
        _init_worker(config.to_dict(), novel, stats)
        outcomes = [_episode_task(t) for t in tasks]

    accs: dict = {(m, eta): [] for m in config.methods for eta in config.etas}
    secs: dict = {(m, eta): 0.0 for m in config.methods for eta in config.etas}
    for (eta, _), (a, s) in zip(tasks, outcomes):
        for m in config.methods:
            accs[(m, eta)].append(a[m])
            secs[(m, eta)] += s[m]

    points = []
    for m in config.methods:
        for eta in config.etas:
            xs = np.array(accs[(m, eta)])
            points.append(
                SweepPoint(
                    method=m,
                    eta=float(eta),
                    mean_acc=float(xs.mean()),
                    std=float(xs.std(ddof=1)) if xs.size > 1 else 0.0,
                    n_episodes=int(xs.size),
                    seconds=secs[(m, eta)] if config.record_timing else 0.0,
                )
            )
    per_episode = {(m, eta): list(map(float, accs[(m, eta)])) for (m, eta) in accs}
    return SweepResult(points=tuple(points), config=config.to_dict(), per_episode=per_episode)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

CSV_HEADER = ("method", "eta", "mean_acc", "std", "n", "seconds")


def emit_report(result: SweepResult, out_dir, per_episode: bool = False) -> dict:
    """Write results.csv and results.json (and episodes.jsonl if asked)."""
    if not result.points:
        raise RuntimeFailure("refusing to write an empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for p in result.points:
            writer.writerow(
                [p.method, repr(p.eta), repr(p.mean_acc), repr(p.std), p.n_episodes, repr(p.seconds)]
            )
    json_path = out / "results.json"
    payload = {
        "config": result.config,
        "points": [asdict(p) for p in result.points],
    }
    json_path.write_text(json.dumps(payload, indent=2))
    paths = {"csv": csv_path, "json": json_path}
    if per_episode:
        jsonl_path = out / "episodes.jsonl"
        with open(jsonl_path, "w") as f:
            for (m, eta), xs in result.per_episode.items():
                for i, acc in enumerate(xs):
                    f.write(json.dumps({"method": m, "eta": eta, "episode": i, "acc": acc}) + "\n")
        paths["episodes"] = jsonl_path
    return paths


def load_report(json_path) -> SweepResult:
    """Inverse of emit_report for the JSON part."""
    payload = json.loads(Path(json_path).read_text())
    points = tuple(SweepPoint(**p) for p in payload["points"])
    return SweepResult(points=points, config=payload["config"])
