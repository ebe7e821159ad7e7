"""ROC curves and AUC."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from nireg.data import LabeledDataset
from nireg.errors import DataError
from nireg.model import LogisticModel, decision_function
from nireg.preprocess import PcaTransform, apply_pca


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # score opening each point; thresholds[0] = +inf for (0, 0)
    auc: float
    n_pos: int
    n_neg: int

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _trapezoid(x, y):
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc_curve(scores, labels) -> RocCurve:
    """ROC points at every distinct score, highest first.

    Samples sharing a score move the curve in one combined step, so ties get
    half credit in the area, exactly as in the pairwise definition.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    if np.any(np.isnan(s)) or not np.all(np.isfinite(s)):
        raise DataError("scores must be finite (NaN or Inf given)")
    if not np.all((y == 0) | (y == 1)):
        raise DataError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1))
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tps = np.cumsum(y == 1)
    fps = np.cumsum(y == 0)
    # last position of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tpr = np.r_[0.0, tps[ends] / n_pos]
    fpr = np.r_[0.0, fps[ends] / n_neg]
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=thresholds, auc=_trapezoid(fpr, tpr), n_pos=n_pos, n_neg=n_neg)


def auc_score(scores, labels) -> float:
    return roc_curve(scores, labels).auc


@dataclass(frozen=True)
class EvalReport:
    model_id: str
    regularizer: dict
    split: str
    curve: RocCurve

    @property
    def auc(self) -> float:
        return self.curve.auc

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "regularizer": self.regularizer,
            "split": self.split,
            "auc": self.auc,
            "n_pos": self.curve.n_pos,
            "n_neg": self.curve.n_neg,
        }


def evaluate(model: LogisticModel, transform: PcaTransform, dataset: LabeledDataset, split_name: str) -> EvalReport:
    if model.transform_id is not None and model.transform_id != transform.transform_id:
        raise DataError("model was trained under a different PCA transform")
    # logits rank exactly like the probabilities but do not round to 0 or 1
    pcs = apply_pca(transform, dataset.features)
    curve = roc_curve(decision_function(model, pcs), dataset.labels)
    return EvalReport(
        model_id=model.model_id,
        regularizer=model.regularizer.to_dict() | {"anchors": len(model.regularizer.anchors)},
        split=split_name,
        curve=curve,
    )


def write_roc_csv(curve: RocCurve, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
            w.writerow([format(t, ".17g"), format(f, ".17g"), format(p, ".17g")])


def write_eval_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")
