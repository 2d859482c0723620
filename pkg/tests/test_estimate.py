"""Distribution estimation, top-k retrieval, anchor sampling, query completion."""

import numpy as np
import pytest

from ugd.data import MultiViewSample, ViewSpec, gen_synthetic_dataset, sample_episode
from ugd.errors import EmptyRetrieval, NoAvailableView
from ugd.estimate import (
    RetrievalSet,
    ViewDistribution,
    build_anchor_batch,
    complete_query_views,
    estimate_distribution,
    retrieve_topk,
    sample_support_anchors,
    view_distances,
)
from ugd.stats import BaseStats, compute_base_stats


def small_stats():
    ds = gen_synthetic_dataset(6, 8, ViewSpec(dims=(3, 4)), 2.0, 0.5, seed=31)
    return compute_base_stats(ds)


class TestViewDistances:
    def test_zero_at_coincident_point(self):
        stats = small_stats()
        x0 = stats.means[stats.classes[2]][0].copy()
        sample = MultiViewSample(views=(x0, None), mask=(True, False), label=None)
        tables = view_distances(sample, stats)
        assert tables[0][2] == 0.0
        assert tables[1] is None

    def test_one_dimensional(self):
        stats = BaseStats(
            classes=(0,),
            view_spec=ViewSpec(dims=(1,)),
            means={0: [np.array([1.0])]},
            covs={0: [np.array([[0.5]])]},
        )
        sample = MultiViewSample(views=(np.array([3.0]),), mask=(True,), label=None)
        assert view_distances(sample, stats)[0][0] == 2.0


class TestRetrieveTopk:
    def test_two_smallest(self):
        rs = retrieve_topk([np.array([0.1, 0.5, 0.3])], (0, 1, 2), k=2)
        assert rs.class_ids == (0, 2)

    def test_union_dedup(self):
        # two views both ranking class 7 then 3
        tables = [np.array([9.0, 1.0, 2.0]), np.array([9.0, 1.5, 2.5])]
        rs = retrieve_topk(tables, (1, 7, 3), k=2)
        assert rs.class_ids == (3, 7)

    def test_tie_breaks_to_smaller_id(self):
        rs = retrieve_topk([np.array([0.2, 0.2, 0.9])], (0, 1, 2), k=1)
        assert rs.class_ids == (0,)

    def test_no_available_view(self):
        with pytest.raises(NoAvailableView):
            retrieve_topk([None, None], (0, 1, 2), k=1)

    def test_against_sort_oracle(self):
        rng = np.random.default_rng(32)
        for trial in range(30):
            n_cls = int(rng.integers(16, 65))
            ids = tuple(range(n_cls))
            n_views = int(rng.integers(1, 4))
            tables = [rng.uniform(size=n_cls) for _ in range(n_views)]
            for k in (1, 2, 4, 8, 16):
                expected = set()
                for t in tables:
                    order = sorted(range(n_cls), key=lambda i: (t[i], i))
                    expected.update(order[:k])
                got = retrieve_topk(tables, ids, k)
                assert got.class_ids == tuple(sorted(expected))


class TestEstimateDistribution:
    def test_available_two_term_average(self):
        stats = small_stats()
        c = stats.classes[0]
        x = np.ones(3)
        sample = MultiViewSample(views=(x, None), mask=(True, False), label=None)
        rs = RetrievalSet(class_ids=(c,), tables=(None, None))
        dist = estimate_distribution(sample, stats, rs)
        np.testing.assert_allclose(dist.means[0], (stats.means[c][0] + x) / 2.0)

    def test_missing_mean_of_means(self):
        stats = small_stats()
        a, b = stats.classes[1], stats.classes[4]
        sample = MultiViewSample(views=(np.ones(3), None), mask=(True, False), label=None)
        rs = RetrievalSet(class_ids=(a, b), tables=(None, None))
        dist = estimate_distribution(sample, stats, rs)
        np.testing.assert_allclose(
            dist.means[1], (stats.means[a][1] + stats.means[b][1]) / 2.0
        )

    def test_identical_covariances_average_to_same(self):
        spec = ViewSpec(dims=(2,))
        sigma = np.array([[2.0, 0.3], [0.3, 1.0]])
        stats = BaseStats(
            classes=(0, 1),
            view_spec=spec,
            means={0: [np.zeros(2)], 1: [np.ones(2)]},
            covs={0: [sigma], 1: [sigma]},
        )
        sample = MultiViewSample(views=(np.ones(2),), mask=(True,), label=None)
        dist = estimate_distribution(sample, stats, RetrievalSet(class_ids=(0, 1), tables=(None,)))
        np.testing.assert_allclose(dist.covs[0], sigma)

    def test_empty_retrieval(self):
        stats = small_stats()
        sample = MultiViewSample(views=(np.ones(3), None), mask=(True, False), label=None)
        with pytest.raises(EmptyRetrieval):
            estimate_distribution(sample, stats, RetrievalSet(class_ids=(), tables=(None, None)))


class TestAnchorSampling:
    def test_tiny_ridge_pins_to_mean(self):
        mu = np.linspace(-1, 1, 8)
        dist = ViewDistribution(means=(mu,), covs=(np.zeros((8, 8)),))
        anchors = sample_support_anchors(dist, 200, ridge=1e-12, seed=7)[0]
        assert np.abs(anchors - mu[:, None]).max() < 1e-5

    def test_monte_carlo_moments(self):
        d = 6
        mu = np.arange(d, dtype=float)
        dist = ViewDistribution(means=(mu,), covs=(np.eye(d),))
        anchors = sample_support_anchors(dist, 10**5, ridge=1e-12, seed=123)[0]
        assert np.abs(anchors.mean(axis=1) - mu).max() < 0.02
        assert np.abs(anchors.var(axis=1, ddof=1) - 1.0).max() < 0.1

    def test_whitened_residuals(self):
        rng = np.random.default_rng(40)
        a = rng.normal(size=(5, 5))
        cov = a @ a.T
        mu = rng.normal(size=5)
        dist = ViewDistribution(means=(mu,), covs=(cov,))
        eps = 1e-9
        anchors = sample_support_anchors(dist, 10**5, ridge=eps, seed=99)[0]
        factor = np.linalg.cholesky(cov + eps * np.eye(5))
        white = np.linalg.solve(factor, anchors - mu[:, None])
        n = white.shape[1]
        assert np.abs(white.mean(axis=1)).max() < 4.0 / np.sqrt(n)
        assert np.abs(white.var(axis=1, ddof=1) - 1.0).max() < 0.1

    def test_deterministic(self):
        dist = ViewDistribution(means=(np.zeros(3),), covs=(np.eye(3),))
        a = sample_support_anchors(dist, 10, ridge=None, seed=(5, 2))[0]
        b = sample_support_anchors(dist, 10, ridge=None, seed=(5, 2))[0]
        assert a.tobytes() == b.tobytes()

    def test_near_psd_fallback(self):
        # slightly indefinite matrix: eigen fallback clamps and still samples
        cov = np.array([[1.0, 0.999999], [0.999999, 1.0]]) - 1e-9 * np.eye(2)
        cov[0, 1] = cov[1, 0] = 1.0000001
        dist = ViewDistribution(means=(np.zeros(2),), covs=(cov,))
        anchors = sample_support_anchors(dist, 50, ridge=1e-12, seed=1)[0]
        assert np.isfinite(anchors).all()


class TestCompleteQueryViews:
    def test_passthrough_bitwise(self):
        x = np.array([1.0, 2.0, 3.0])
        sample = MultiViewSample(views=(x,), mask=(True,), label=None)
        dist = ViewDistribution(means=(np.zeros(3),), covs=(np.eye(3),))
        out = complete_query_views(sample, dist)
        assert out.views[0].tobytes() == x.tobytes()

    def test_missing_filled_with_center(self):
        sample = MultiViewSample(views=(np.zeros(2), None), mask=(True, False), label=None)
        dist = ViewDistribution(
            means=(np.zeros(2), np.array([1.0, 2.0, 3.0])),
            covs=(np.eye(2), np.eye(3)),
        )
        out = complete_query_views(sample, dist)
        np.testing.assert_array_equal(out.views[1], [1.0, 2.0, 3.0])
        assert all(out.mask)

    def test_idempotent(self):
        sample = MultiViewSample(views=(np.ones(2), None), mask=(True, False), label=None)
        dist = ViewDistribution(
            means=(np.zeros(2), np.array([4.0, 5.0])), covs=(np.eye(2), np.eye(2))
        )
        once = complete_query_views(sample, dist)
        twice = complete_query_views(once, dist)
        for a, b in zip(once.views, twice.views):
            assert a.tobytes() == b.tobytes()


class TestBuildAnchorBatch:
    def test_column_layout_and_labels(self):
        ds = gen_synthetic_dataset(8, 20, ViewSpec(dims=(4, 4, 4)), 3.0, 1.0, seed=50)
        stats = compute_base_stats(ds)
        novel = gen_synthetic_dataset(
            6, 20, ViewSpec(dims=(4, 4, 4)), 3.0, 1.0, seed=51, class_id_offset=8
        )
        ep = sample_episode(novel, 5, 1, 15, seed=52)
        batch = build_anchor_batch(ep, stats, k=2, n_per_support=60, ridge=None, seed=53)
        assert all(g.shape == (4, 5 * 60 + 75) for g in batch.gammas)
        assert (batch.labels[:60] == batch.labels[0]).all()
        assert batch.labels.shape == (300,)

    def test_complete_episode_queries_pass_through(self):
        ds = gen_synthetic_dataset(8, 20, ViewSpec(dims=(4, 4)), 3.0, 1.0, seed=54)
        stats = compute_base_stats(ds)
        novel = gen_synthetic_dataset(
            4, 10, ViewSpec(dims=(4, 4)), 3.0, 1.0, seed=55, class_id_offset=8
        )
        ep = sample_episode(novel, 3, 1, 4, seed=56)
        batch = build_anchor_batch(ep, stats, k=2, n_per_support=5, ridge=1e-12, seed=57)
        for j, q in enumerate(ep.query):
            col = 3 * 5 + j
            for v in range(2):
                np.testing.assert_array_equal(batch.gammas[v][:, col], q.views[v])

    def test_estimated_covariance_psd_after_ridge(self):
        ds = gen_synthetic_dataset(6, 4, ViewSpec(dims=(5, 3)), 2.0, 0.5, seed=58)
        stats = compute_base_stats(ds)
        rng = np.random.default_rng(59)
        from ugd.estimate import adaptive_ridge, estimate_for_sample

        for _ in range(20):
            mask = (True, rng.random() < 0.5)
            views = tuple(
                rng.normal(size=d) if m else None for d, m in zip((5, 3), mask)
            )
            sample = MultiViewSample(views=views, mask=mask, label=None)
            dist = estimate_for_sample(sample, stats, k=2)
            for cov in dist.covs:
                ridged = cov + adaptive_ridge(cov) * np.eye(cov.shape[0])
                w = np.linalg.eigvalsh(ridged)
                assert w.min() >= -1e-8 * max(np.trace(ridged), 1.0)
