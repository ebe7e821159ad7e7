import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_force_assignment, random_rotation

from nireg.clustering import build_subpopulations, kmeans, make_ood_split, matched_agreement
from nireg.data import LabeledDataset
from nireg.errors import DataError
from nireg.preprocess import fit_pca
from nireg.synthetic import generate, preset


def two_blobs(seed, n=200, d=5, center=10.0, spread=1.0):
    rng = np.random.default_rng(seed)
    truth = np.repeat([0, 1], n // 2)
    x = np.where(truth[:, None] == 0, center, -center) + spread * rng.normal(size=(n, d))
    return x, truth


def test_k1_is_the_mean(rng):
    x = rng.normal(size=(50, 3)) * [1, 2, 3]
    r = kmeans(x, 1)
    np.testing.assert_allclose(r.centroids[0], x.mean(axis=0), atol=1e-12)
    assert r.inertia == pytest.approx(len(x) * x.var(axis=0).sum(), rel=1e-10)


def test_k_equals_n_has_zero_inertia(rng):
    x = rng.normal(size=(12, 2))
    r = kmeans(x, 12, seed=3)
    assert r.inertia == pytest.approx(0.0, abs=1e-20)
    assert sorted(r.assignment.tolist()) == list(range(12))


@pytest.mark.parametrize("seed", range(5))
def test_two_blob_recovery(seed):
    x, truth = two_blobs(seed)
    r = kmeans(x, 2, seed=seed)
    assert matched_agreement(truth, r.assignment) == 1.0


def test_result_invariants(rng):
    x = rng.normal(size=(80, 4))
    r = kmeans(x, 5, seed=1)
    assert np.all(r.sizes() > 0)
    np.testing.assert_array_equal(r.assignment, brute_force_assignment(x, r.centroids))
    direct = sum(float(np.sum((x[i] - r.centroids[r.assignment[i]]) ** 2)) for i in range(len(x)))
    assert r.inertia == pytest.approx(direct, rel=1e-8)


def test_duplicate_points_keep_clusters_non_empty():
    x = np.r_[np.zeros((10, 2)), np.ones((10, 2))]
    r = kmeans(x, 4, seed=0)
    assert np.all(r.sizes() > 0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(5, 60), k=st.integers(1, 5))
def test_lloyd_never_raises_inertia(seed, n, k):
    # the per-iteration monotonicity assertion lives inside the Lloyd loop
    x = np.random.default_rng(seed).normal(size=(n, 3))
    kmeans(x, min(k, n), seed=seed, restarts=2)


def test_rotation_invariance(rng):
    x, _ = two_blobs(1, n=120, d=4, center=2.0)
    q = random_rotation(4, rng)
    a = kmeans(x, 3, seed=11)
    b = kmeans(x @ q.T, 3, seed=11)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert b.inertia == pytest.approx(a.inertia, rel=1e-8)


def test_deterministic_across_workers(rng):
    x = rng.normal(size=(150, 3))
    a = kmeans(x, 4, seed=5, workers=1)
    b = kmeans(x, 4, seed=5, workers=4)
    np.testing.assert_array_equal(a.assignment, b.assignment)
    assert a.inertia == b.inertia


def test_kmeans_errors(rng):
    with pytest.raises(DataError):
        kmeans(rng.normal(size=(3, 2)), 4)
    bad = rng.normal(size=(5, 2))
    bad[0, 0] = np.nan
    with pytest.raises(DataError, match="non-finite"):
        kmeans(bad, 2)


@pytest.fixture(scope="module")
def planted():
    return generate(preset("acceptance", seed=0))


def test_single_combined_cluster_is_everything(planted):
    ds = planted.dataset
    part = build_subpopulations(ds, fit_pca(ds.features), 1, seed=0)
    assert part.k == 1
    np.testing.assert_array_equal(part.clusters[0], np.arange(ds.n))


def test_planted_environment_recovery(planted):
    ds = planted.dataset
    part = build_subpopulations(ds, fit_pca(ds.features), 4, seed=0)
    assert matched_agreement(planted.env_labels, part.assignment()) >= 0.95


def test_partition_structure(planted):
    ds = planted.dataset
    part = build_subpopulations(ds, fit_pca(ds.features), 5, seed=2, pairing_rule="by_index")
    allidx = np.concatenate(part.clusters)
    assert allidx.size == ds.n and np.array_equal(np.sort(allidx), np.arange(ds.n))
    counts = part.counts(ds.labels)
    n0, n1 = ds.class_counts()
    assert sum(c[0] for c in counts) == n0 and sum(c[1] for c in counts) == n1
    assert all(c[0] > 0 and c[1] > 0 for c in counts)
    assert part.pairing == tuple((i, i) for i in range(5))
    rep = part.report(ds.labels)
    assert rep["pairing_rule"] == "by_index" and len(rep["clusters"]) == 5


def test_by_size_pairs_largest_with_largest(planted):
    ds = planted.dataset
    part = build_subpopulations(ds, fit_pca(ds.features), 3, seed=4, pairing_rule="by_size")
    s0 = part.per_class[0].sizes()
    s1 = part.per_class[1].sizes()
    ranks0 = np.argsort(np.argsort(-s0, kind="stable"), kind="stable")
    ranks1 = np.argsort(np.argsort(-s1, kind="stable"), kind="stable")
    for i, j in part.pairing:
        assert ranks0[i] == ranks1[j]


def test_build_errors():
    one_class = LabeledDataset(features=np.arange(10.0)[:, None], labels=np.zeros(10))
    with pytest.raises(DataError, match="both classes"):
        build_subpopulations(one_class, None, 2)
    small = LabeledDataset(features=np.arange(10.0)[:, None], labels=[1] * 9 + [0])
    with pytest.raises(DataError, match="fewer than"):
        build_subpopulations(small, None, 2)
    ok = LabeledDataset(features=np.arange(10.0)[:, None], labels=[0, 1] * 5)
    with pytest.raises(DataError, match="pairing"):
        build_subpopulations(ok, None, 2, pairing_rule="random")


def test_ood_split(planted):
    ds = planted.dataset
    part2 = build_subpopulations(ds, fit_pca(ds.features), 2, seed=0)
    split = make_ood_split(part2, 0)
    np.testing.assert_array_equal(split.train_indices, part2.clusters[1])
    part5 = build_subpopulations(ds, fit_pca(ds.features), 5, seed=0)
    tests = [make_ood_split(part5, c).test_indices for c in range(5)]
    tiled = np.concatenate(tests)
    assert np.array_equal(np.sort(tiled), np.arange(ds.n))
    for c in range(5):
        s = make_ood_split(part5, c)
        assert np.array_equal(np.sort(np.r_[s.train_indices, s.test_indices]), np.arange(ds.n))
    with pytest.raises(DataError, match="out of range"):
        make_ood_split(part5, 5)


def test_matched_agreement_relabeling():
    assert matched_agreement([0, 0, 1, 1, 2], [2, 2, 0, 0, 1]) == 1.0
    assert matched_agreement([0, 0, 1, 1], [0, 1, 0, 1]) == 0.5
