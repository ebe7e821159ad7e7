"""Labeled feature datasets, CSV ingestion and split bookkeeping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from nireg.errors import DataError

ID_COLUMN = "sample_id"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LabeledDataset:
    """Dense ``n x d`` float64 features with aligned 0/1 labels and ids.

    Arrays are copied and marked read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    sample_ids: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {x.shape}")
        n, d = x.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset needs n >= 1 and d >= 1, got {n}x{d}")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        y = np.asarray(self.labels)
        if y.shape != (n,):
            raise DataError(f"labels length {y.shape} does not match {n} rows")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        ids = tuple(str(s) for s in self.sample_ids) or tuple(str(i) for i in range(n))
        if len(ids) != n:
            raise DataError(f"{len(ids)} sample ids for {n} rows")
        if len(set(ids)) != n:
            raise DataError("sample ids are not unique")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(d))
        if len(names) != d:
            raise DataError(f"{len(names)} feature names for {d} columns")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int8)))
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> tuple[int, int]:
        n1 = int(self.labels.sum())
        return self.n - n1, n1


@dataclass(frozen=True)
class SplitSpec:
    train_indices: np.ndarray
    test_indices: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        tr = np.unique(np.asarray(self.train_indices, dtype=np.int64))
        te = np.unique(np.asarray(self.test_indices, dtype=np.int64))
        if tr.size == 0 or te.size == 0:
            raise DataError("train and test index sets must both be non-empty")
        if np.intersect1d(tr, te).size:
            raise DataError("train and test index sets overlap")
        if tr[0] < 0 or te[0] < 0:
            raise DataError("negative index in split")
        object.__setattr__(self, "train_indices", _frozen(tr))
        object.__setattr__(self, "test_indices", _frozen(te))

    def validate_for(self, n: int) -> None:
        top = max(int(self.train_indices[-1]), int(self.test_indices[-1]))
        if top >= n:
            raise DataError(f"split index {top} out of range for {n} samples")

    def to_dict(self) -> dict:
        return {
            "train_indices": self.train_indices.tolist(),
            "test_indices": self.test_indices.tolist(),
            **self.meta,
        }


def subset(dataset: LabeledDataset, indices: Sequence[int]) -> LabeledDataset:
    """Rows at ``indices`` in ascending index order; labels and ids follow."""
    idx = np.unique(np.asarray(indices, dtype=np.int64))
    if idx.size == 0:
        raise DataError("empty index set")
    if idx[0] < 0 or idx[-1] >= dataset.n:
        raise DataError(f"index out of range for {dataset.n} samples")
    return LabeledDataset(
        features=dataset.features[idx],
        labels=dataset.labels[idx],
        sample_ids=tuple(dataset.sample_ids[i] for i in idx),
        feature_names=dataset.feature_names,
    )


def _resolve_column(spec, header, width, what):
    if isinstance(spec, str) and not spec.lstrip("-").isdigit():
        if header is None:
            raise DataError(f"{what} column given by name {spec!r} but the file has no header")
        if spec not in header:
            raise DataError(f"{what} column {spec!r} not in header {header}")
        return header.index(spec)
    j = int(spec)
    if not 0 <= j < width:
        raise DataError(f"{what} column index {j} out of range for {width} columns")
    return j


def load_csv(path, label_column="label", has_header=True, id_column=None) -> LabeledDataset:
    """Read a comma-separated file of numeric features plus one 0/1 label column.

    ``label_column`` is a header name or a zero-based index. With a header, a
    column called ``sample_id`` is used for ids unless ``id_column`` says
    otherwise; without ids, row numbers are used.
    """
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = None
    if has_header:
        if not rows:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in rows.pop(0)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(header) if header is not None else len(rows[0])
    y_col = _resolve_column(label_column, header, width, "label")
    if id_column is None and header is not None and ID_COLUMN in header:
        id_column = ID_COLUMN
    id_col = None if id_column is None else _resolve_column(id_column, header, width, "id")
    if id_col == y_col:
        raise DataError("label and id columns coincide")
    feat_cols = [j for j in range(width) if j not in (y_col, id_col)]
    if not feat_cols:
        raise DataError(f"{path}: no feature columns")

    n = len(rows)
    x = np.empty((n, len(feat_cols)))
    y = np.empty(n, dtype=np.int8)
    ids = []
    line0 = 2 if has_header else 1
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + line0} has {len(row)} fields, expected {width}")
        for out_j, j in enumerate(feat_cols):
            try:
                v = float(row[j])
            except ValueError:
                raise DataError(
                    f"{path}: row {i + line0}, column {j}: cannot parse {row[j]!r} as a number"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i + line0}, column {j}: non-finite value {row[j]!r}")
            x[i, out_j] = v
        try:
            lab = float(row[y_col])
        except ValueError:
            lab = math.nan
        if lab not in (0.0, 1.0):
            raise DataError(f"{path}: row {i + line0}: non-binary label {row[y_col]!r}")
        y[i] = int(lab)
        if id_col is not None:
            ids.append(row[id_col].strip())
    names = tuple(header[j] for j in feat_cols) if header is not None else ()
    return LabeledDataset(features=x, labels=y, sample_ids=tuple(ids), feature_names=names)


def save_csv(dataset: LabeledDataset, path, label_name: str = "label") -> None:
    """Write ``sample_id``, the features (17 significant digits) and the label."""
    if dataset is None or dataset.n == 0:
        raise DataError("refusing to write an empty dataset")
    path = Path(path)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([ID_COLUMN, *dataset.feature_names, label_name])
            for sid, row, lab in zip(dataset.sample_ids, dataset.features, dataset.labels):
                w.writerow([sid, *(format(v, ".17g") for v in row), int(lab)])
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc
