"""k-means and the per-class subpopulation construction built on it.

Each class is clustered on its own; one cluster of each class is then paired
into a "combined" cluster. Combined clusters serve both as the held-out
out-of-distribution split and as the subpopulations of the training set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from nireg._parallel import ordered_map
from nireg.data import LabeledDataset, SplitSpec
from nireg.errors import DataError
from nireg.preprocess import PcaTransform, apply_pca

PAIRING_RULES = ("by_index", "by_size", "by_centroid")


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations: int
    seed: int | None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)


def _sq_dists(x, centroids, chunk_elems=1 << 22):
    # direct differences: the |x|^2 - 2x.c + |c|^2 expansion loses precision far from the origin
    n, d = x.shape
    k = centroids.shape[0]
    out = np.empty((n, k))
    step = max(1, chunk_elems // max(1, k * d))
    for lo in range(0, n, step):
        diff = x[lo : lo + step, None, :] - centroids[None, :, :]
        out[lo : lo + step] = np.einsum("nkd,nkd->nk", diff, diff)
    return out


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = [int(rng.integers(n))]
    closest = _sq_dists(x, x[centers]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0.0:
            # fewer distinct points than k; take the first unused rows
            unused = np.setdiff1d(np.arange(n), centers)
            centers.append(int(unused[0]))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            centers.append(min(idx, n - 1))
        closest = np.minimum(closest, _sq_dists(x, x[centers[-1:]])[:, 0])
    return x[centers].copy()


def _lloyd(x, centroids, max_iter, tol):
    k = centroids.shape[0]
    prev_inertia = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        assign = np.argmin(d2, axis=1)
        centroids, assign, d2 = _repair_empty(x, centroids, assign, d2)
        counts = np.bincount(assign, minlength=k)
        inertia = float(d2[np.arange(len(x)), assign].sum())
        new = np.zeros_like(centroids)
        np.add.at(new, assign, x)
        new /= counts[:, None]
        new_inertia = float(_sq_dists(x, new)[np.arange(len(x)), assign].sum())
        # an update step never increases inertia, up to rounding
        assert new_inertia <= inertia * (1 + 1e-12) + 1e-12, "k-means inertia increased"
        assert new_inertia <= prev_inertia * (1 + 1e-12) + 1e-12, "k-means inertia increased"
        prev_inertia = new_inertia
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dists(x, centroids)
    centroids, assign, d2 = _repair_empty(x, centroids, np.argmin(d2, axis=1), d2)
    inertia = float(d2[np.arange(len(x)), assign].sum())
    return centroids, assign, inertia, it


def _repair_empty(x, centroids, assign, d2):
    """Reseed each empty cluster at the point farthest from its centroid.

    Only points whose cluster has other members are eligible, so the repair
    never empties another cluster.
    """
    k = centroids.shape[0]
    counts = np.bincount(assign, minlength=k)
    if np.all(counts > 0):
        return centroids, assign, d2
    centroids, assign, d2 = centroids.copy(), assign.copy(), d2.copy()
    for j in np.flatnonzero(counts == 0):
        own = d2[np.arange(len(x)), assign]
        movable = counts[assign] > 1
        far = int(np.argmax(np.where(movable, own, -np.inf)))
        counts[assign[far]] -= 1
        assign[far] = j
        counts[j] = 1
        centroids[j] = x[far]
        d2[:, j] = _sq_dists(x, centroids[j : j + 1])[:, 0]
    return centroids, assign, d2


def kmeans(
    data,
    k: int,
    seed: int | None = 0,
    restarts: int = 8,
    max_iter: int = 300,
    tol: float = 1e-6,
    workers: int = 1,
) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; the best of ``restarts`` runs.

    Restart ``r`` draws from its own child of ``SeedSequence(seed)``, and the
    winner is the lowest (inertia, r), so the result does not depend on
    ``workers``.
    """
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("kmeans expects a 2-D matrix")
    n = x.shape[0]
    if k < 1 or restarts < 1:
        raise DataError("kmeans needs k >= 1 and restarts >= 1")
    if n < k:
        raise DataError(f"kmeans: {n} samples < k={k}")
    if not np.all(np.isfinite(x)):
        raise DataError("kmeans: non-finite input")
    streams = np.random.SeedSequence(seed).spawn(restarts)

    def run(ss):
        rng = np.random.default_rng(ss)
        return _lloyd(x, _kmeans_pp(x, k, rng), max_iter, tol)

    runs = ordered_map(run, streams, workers)
    best = min(range(restarts), key=lambda r: (runs[r][2], r))
    c, a, inertia, it = runs[best]
    return KMeansResult(centroids=c, assignment=a, inertia=inertia, iterations=it, seed=seed)


@dataclass(frozen=True)
class SubpopulationPartition:
    """Combined clusters (index arrays into the dataset) and how they were made."""

    clusters: tuple[np.ndarray, ...]
    per_class: tuple[KMeansResult, KMeansResult]
    class_indices: tuple[np.ndarray, np.ndarray]
    pairing: tuple[tuple[int, int], ...]
    pairing_rule: str
    seed: int | None

    @property
    def k(self) -> int:
        return len(self.clusters)

    @property
    def n(self) -> int:
        return int(sum(len(c) for c in self.clusters))

    def counts(self, labels) -> list[tuple[int, int, float]]:
        y = np.asarray(labels)
        out = []
        for idx in self.clusters:
            n1 = int(y[idx].sum())
            n0 = len(idx) - n1
            out.append((n0, n1, n1 / len(idx)))
        return out

    def assignment(self) -> np.ndarray:
        lab = np.empty(self.n, dtype=np.int64)
        for c, idx in enumerate(self.clusters):
            lab[idx] = c
        return lab

    def report(self, labels, **extra) -> dict:
        clusters = []
        for c, ((i0, i1), (n0, n1, frac)) in enumerate(zip(self.pairing, self.counts(labels))):
            clusters.append(
                {
                    "cluster": c,
                    "class0_cluster": i0,
                    "class1_cluster": i1,
                    "n_class0": n0,
                    "n_class1": n1,
                    "n_total": n0 + n1,
                    "fraction_class1": frac,
                    "centroid_norm_class0": float(np.linalg.norm(self.per_class[0].centroids[i0])),
                    "centroid_norm_class1": float(np.linalg.norm(self.per_class[1].centroids[i1])),
                }
            )
        return {
            "k_per_class": self.k,
            "pairing_rule": self.pairing_rule,
            "seed": self.seed,
            "inertia_class0": self.per_class[0].inertia,
            "inertia_class1": self.per_class[1].inertia,
            "clusters": clusters,
            **extra,
        }


def _pair(rule, km0, km1):
    k = km0.k
    if rule == "by_index":
        return [(i, i) for i in range(k)]
    if rule == "by_size":
        o0 = sorted(range(k), key=lambda i: (-km0.sizes()[i], i))
        o1 = sorted(range(k), key=lambda i: (-km1.sizes()[i], i))
        return sorted(zip(o0, o1))
    if rule == "by_centroid":
        cost = _sq_dists(km0.centroids, km1.centroids)
        rows, cols = linear_sum_assignment(cost)
        return [(int(r), int(c)) for r, c in zip(rows, cols)]
    raise DataError(f"unknown pairing rule {rule!r}; expected one of {PAIRING_RULES}")


def build_subpopulations(
    dataset: LabeledDataset,
    transform: PcaTransform | None,
    k_per_class: int,
    seed: int | None = 0,
    pairing_rule: str = "by_centroid",
    workers: int = 1,
    **kmeans_opts,
) -> SubpopulationPartition:
    """Cluster each class separately in PCA space and pair the clusters.

    Pairing rules: ``by_index`` pairs class-0 cluster i with class-1 cluster i;
    ``by_size`` pairs the i-th largest with the i-th largest; ``by_centroid``
    solves the assignment problem on squared centroid distances. Combined
    clusters are listed in class-0 cluster order.
    """
    if pairing_rule not in PAIRING_RULES:
        raise DataError(f"unknown pairing rule {pairing_rule!r}; expected one of {PAIRING_RULES}")
    n0, n1 = dataset.class_counts()
    if n0 == 0 or n1 == 0:
        raise DataError("build_subpopulations needs both classes present")
    if min(n0, n1) < k_per_class:
        raise DataError(f"a class has {min(n0, n1)} samples, fewer than k_per_class={k_per_class}")
    z = dataset.features if transform is None else apply_pca(transform, dataset.features)
    idx0 = np.flatnonzero(dataset.labels == 0)
    idx1 = np.flatnonzero(dataset.labels == 1)
    # independent streams per class
    s0, s1 = np.random.SeedSequence(seed).spawn(2)
    km0 = kmeans(z[idx0], k_per_class, seed=int(s0.generate_state(1)[0]), workers=workers, **kmeans_opts)
    km1 = kmeans(z[idx1], k_per_class, seed=int(s1.generate_state(1)[0]), workers=workers, **kmeans_opts)
    pairing = _pair(pairing_rule, km0, km1)
    clusters = tuple(
        np.sort(np.concatenate([idx0[km0.assignment == i], idx1[km1.assignment == j]]))
        for i, j in pairing
    )
    return SubpopulationPartition(
        clusters=clusters,
        per_class=(km0, km1),
        class_indices=(idx0, idx1),
        pairing=tuple(pairing),
        pairing_rule=pairing_rule,
        seed=seed,
    )


def make_ood_split(partition: SubpopulationPartition, test_cluster: int) -> SplitSpec:
    """Withhold one combined cluster as the test set; the rest is training."""
    if not 0 <= test_cluster < partition.k:
        raise DataError(f"test_cluster {test_cluster} out of range for {partition.k} clusters")
    rest = [c for i, c in enumerate(partition.clusters) if i != test_cluster]
    if not rest:
        raise DataError("cannot withhold the only cluster")
    return SplitSpec(
        train_indices=np.concatenate(rest),
        test_indices=partition.clusters[test_cluster],
        meta={"test_cluster": test_cluster},
    )


def matched_agreement(reference, predicted) -> float:
    """Fraction of samples on which two labelings agree under the best relabeling."""
    a = np.asarray(reference)
    b = np.asarray(predicted)
    ua, ia = np.unique(a, return_inverse=True)
    ub, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ua.size, ub.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    rows, cols = linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / a.size)
