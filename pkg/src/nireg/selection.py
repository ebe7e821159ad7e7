"""Hyperparameter selection by held-out AUC.

``tune_l2`` picks the ridge strength with stratified random k-fold CV.
``tune_ni`` picks the invariance strength by holding out one subpopulation at
a time: anchors and the joint fit only ever see the remaining clusters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from nireg._parallel import ordered_map
from nireg.data import LabeledDataset
from nireg.errors import DataError
from nireg.metrics import auc_score
from nireg.model import RegularizerSpec, SolverOptions, decision_function, fit, fit_cluster_anchors
from nireg.preprocess import PcaTransform, apply_pca

DEFAULT_GRID = tuple(float(v) for v in np.logspace(-6, 6, 13))
TIE_TOL = 1e-12


@dataclass(frozen=True)
class TuningResult:
    grid: tuple[float, ...]
    scores: np.ndarray  # len(grid) x n_folds held-out AUCs
    best_value: float
    protocol: str
    seed: int | None
    folds: tuple[np.ndarray, ...] = ()
    notes: dict = field(default_factory=dict)

    @property
    def means(self) -> np.ndarray:
        return self.scores.mean(axis=1)

    @property
    def best_index(self) -> int:
        return self.grid.index(self.best_value)

    def to_dict(self) -> dict:
        cells = [
            {"value": v, "fold": f, "auc": float(self.scores[i, f])}
            for i, v in enumerate(self.grid)
            for f in range(self.scores.shape[1])
        ]
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "grid": list(self.grid),
            "fold_sizes": [len(f) for f in self.folds],
            "cells": cells,
            "mean_auc": self.means.tolist(),
            "best_value": self.best_value,
            "best_index": self.best_index,
            **self.notes,
        }


def write_tuning_report(result: TuningResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2)
        fh.write("\n")


def select_best(grid: Sequence[float], means: np.ndarray) -> float:
    """Largest grid value whose mean AUC is within ``TIE_TOL`` of the maximum."""
    means = np.asarray(means, dtype=np.float64)
    top = means.max()
    return max(v for v, m in zip(grid, means) if m >= top - TIE_TOL)


def _check_grid(grid):
    grid = tuple(float(v) for v in grid)
    if not grid:
        raise DataError("hyperparameter grid is empty")
    if any(not v > 0 for v in grid):
        raise DataError("hyperparameter grid values must be > 0")
    if len(set(grid)) != len(grid):
        raise DataError("hyperparameter grid has duplicates")
    return grid


def stratified_folds(labels, folds: int, seed: int | None) -> tuple[np.ndarray, ...]:
    """Shuffle each class with ``seed`` and deal it round-robin into folds."""
    y = np.asarray(labels)
    if folds < 2:
        raise DataError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    members: list[list[int]] = [[] for _ in range(folds)]
    offset = 0
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if idx.size < folds:
            raise DataError(f"class {cls} has {idx.size} samples, fewer than {folds} folds")
        for pos, i in enumerate(rng.permutation(idx)):
            members[(pos + offset) % folds].append(int(i))
        offset += idx.size
    return tuple(np.sort(np.array(m, dtype=np.int64)) for m in members)


def _assert_partition(parts, n, what):
    allidx = np.concatenate(parts)
    if allidx.size != n or not np.array_equal(np.sort(allidx), np.arange(n)):
        raise AssertionError(f"{what} do not partition the {n} training samples")


def tune_l2(
    dataset: LabeledDataset,
    transform: PcaTransform,
    grid: Sequence[float] = DEFAULT_GRID,
    folds: int = 5,
    seed: int | None = 0,
    opts: SolverOptions | None = None,
    workers: int = 1,
) -> TuningResult:
    grid = _check_grid(grid)
    x = apply_pca(transform, dataset.features)
    y = dataset.labels
    parts = stratified_folds(y, folds, seed)
    _assert_partition(parts, dataset.n, "folds")

    def cell(job):
        lam, f = job
        test = parts[f]
        train = np.setdiff1d(np.arange(dataset.n), test, assume_unique=True)
        m = fit(x[train], y[train], RegularizerSpec.l2(lam), opts)
        return auc_score(decision_function(m, x[test]), y[test])

    jobs = [(lam, f) for lam in grid for f in range(folds)]
    scores = np.array(ordered_map(cell, jobs, workers)).reshape(len(grid), folds)
    return TuningResult(
        grid=grid,
        scores=scores,
        best_value=select_best(grid, scores.mean(axis=1)),
        protocol="random_kfold",
        seed=seed,
        folds=parts,
    )


def tune_ni(
    dataset: LabeledDataset,
    transform: PcaTransform,
    partition,
    grid: Sequence[float] = DEFAULT_GRID,
    anchor_ridge: float | None = None,
    opts: SolverOptions | None = None,
    workers: int = 1,
) -> TuningResult:
    """Cluster-holdout CV for the invariance strength.

    For holdout cluster ``h``: anchors come from the other clusters only, the
    penalty sums over those anchors only, and the joint model is fit on the
    other clusters' rows. The holdout is used for scoring and nothing else.
    """
    grid = _check_grid(grid)
    clusters = tuple(np.asarray(c, dtype=np.int64) for c in getattr(partition, "clusters", partition))
    if len(clusters) < 2:
        raise DataError("cluster-holdout CV needs at least 2 clusters")
    _assert_partition(clusters, dataset.n, "clusters")
    x = apply_pca(transform, dataset.features)
    y = dataset.labels
    for h, idx in enumerate(clusters):
        if y[idx].min() == y[idx].max():
            raise DataError(f"holdout cluster {h} contains a single class")

    # an anchor depends on its own cluster only, so one fit per cluster serves every holdout
    anchors = fit_cluster_anchors(x, y, clusters, anchor_ridge, opts, workers)

    plans = []
    for h, test in enumerate(clusters):
        kept = [c for c in range(len(clusters)) if c != h]
        train = np.sort(np.concatenate([clusters[c] for c in kept]))
        anchor_rows = np.concatenate([clusters[c] for c in kept])
        assert np.intersect1d(anchor_rows, test).size == 0, "holdout rows leaked into anchors"
        assert np.intersect1d(train, test).size == 0, "holdout rows leaked into the joint fit"
        plans.append((train, test, tuple(anchors[c] for c in kept), tuple(kept)))

    def cell(job):
        alpha, h = job
        train, test, kept_anchors, _ = plans[h]
        m = fit(x[train], y[train], RegularizerSpec.ni(alpha, kept_anchors), opts)
        return auc_score(decision_function(m, x[test]), y[test])

    jobs = [(a, h) for a in grid for h in range(len(clusters))]
    scores = np.array(ordered_map(cell, jobs, workers)).reshape(len(grid), len(clusters))
    return TuningResult(
        grid=grid,
        scores=scores,
        best_value=select_best(grid, scores.mean(axis=1)),
        protocol="cluster_holdout",
        seed=getattr(partition, "seed", None),
        folds=clusters,
        notes={
            "holdout_anchor_excluded": True,
            "anchors_used": {str(h): list(p[3]) for h, p in enumerate(plans)},
            "leak_check": "passed",
        },
    )


def tune_ni_kfold(
    dataset: LabeledDataset,
    transform: PcaTransform,
    partition,
    grid: Sequence[float] = DEFAULT_GRID,
    folds: int = 5,
    seed: int | None = 0,
    anchor_ridge: float | None = None,
    opts: SolverOptions | None = None,
    workers: int = 1,
) -> TuningResult:
    """Random-fold fallback for the invariance strength (single-cluster case).

    Anchors are refit inside every fold on the fold's training rows of each
    cluster, so held-out rows never reach an anchor.
    """
    grid = _check_grid(grid)
    clusters = tuple(np.asarray(c, dtype=np.int64) for c in getattr(partition, "clusters", partition))
    x = apply_pca(transform, dataset.features)
    y = dataset.labels
    parts = stratified_folds(y, folds, seed)
    _assert_partition(parts, dataset.n, "folds")

    plans = []
    for test in parts:
        train = np.setdiff1d(np.arange(dataset.n), test, assume_unique=True)
        sub = [np.intersect1d(c, train) for c in clusters]
        plans.append((train, test, fit_cluster_anchors(x, y, sub, anchor_ridge, opts)))

    def cell(job):
        alpha, f = job
        train, test, anchors = plans[f]
        m = fit(x[train], y[train], RegularizerSpec.ni(alpha, anchors), opts)
        return auc_score(decision_function(m, x[test]), y[test])

    jobs = [(a, f) for a in grid for f in range(folds)]
    scores = np.array(ordered_map(cell, jobs, workers)).reshape(len(grid), folds)
    return TuningResult(
        grid=grid,
        scores=scores,
        best_value=select_best(grid, scores.mean(axis=1)),
        protocol="random_kfold",
        seed=seed,
        folds=parts,
        notes={"fallback": "single training cluster; cluster-holdout CV impossible"},
    )
