"""Logistic regression over principal components with a pluggable penalty.

Three penalties on the weight vector ``w`` (never on the bias):

* ``none``
* ``l2``: ``lam * ||w||^2``
* ``ni``: ``alpha * sum_c ||w - w_c||^2`` where the anchors ``w_c`` are weights
  fit separately on each subpopulation ``c``.

The data term is the summed (not averaged) cross-entropy, so penalty strengths
scale with the number of samples.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from nireg._parallel import ordered_map
from nireg.errors import DataError, NumericError

KINDS = ("none", "l2", "ni")
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    lam: float = 0.0
    alpha: float = 0.0
    anchors: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0 or self.alpha < 0:
            raise DataError("regularization strengths must be >= 0")
        if self.kind == "l2" and not self.lam > 0:
            raise DataError("l2 regularizer needs lam > 0")
        if self.kind == "ni":
            if not self.alpha > 0:
                raise DataError("ni regularizer needs alpha > 0")
            if len(self.anchors) == 0:
                raise DataError("ni regularizer needs at least one anchor")
        anchors = tuple(np.asarray(a, dtype=np.float64).ravel() for a in self.anchors)
        if len({a.shape for a in anchors}) > 1:
            raise DataError("anchors have different lengths")
        object.__setattr__(self, "anchors", anchors)

    @classmethod
    def l2(cls, lam: float) -> "RegularizerSpec":
        return cls(kind="l2", lam=float(lam))

    @classmethod
    def ni(cls, alpha: float, anchors) -> "RegularizerSpec":
        return cls(kind="ni", alpha=float(alpha), anchors=tuple(anchors))

    def check_length(self, k: int) -> None:
        if self.kind == "ni" and self.anchors[0].shape[0] != k:
            raise DataError(f"anchor length {self.anchors[0].shape[0]} does not match {k} weights")

    def penalty(self, w: np.ndarray) -> float:
        if self.kind == "l2":
            return self.lam * float(w @ w)
        if self.kind == "ni":
            return self.alpha * sum(float((w - a) @ (w - a)) for a in self.anchors)
        return 0.0

    def penalty_grad(self, w: np.ndarray) -> np.ndarray:
        if self.kind == "l2":
            return 2.0 * self.lam * w
        if self.kind == "ni":
            return 2.0 * self.alpha * (len(self.anchors) * w - np.sum(self.anchors, axis=0))
        return np.zeros_like(w)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "lambda": self.lam,
            "alpha": self.alpha,
            "anchors": [a.tolist() for a in self.anchors],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RegularizerSpec":
        return cls(
            kind=doc["kind"],
            lam=float(doc.get("lambda", 0.0)),
            alpha=float(doc.get("alpha", 0.0)),
            anchors=tuple(np.asarray(a, dtype=np.float64) for a in doc.get("anchors", [])),
        )


@dataclass(frozen=True)
class SolverOptions:
    gtol: float = 1e-6
    max_iter: int = 1000
    armijo_c: float = 1e-4
    max_backtracks: int = 60


@dataclass(frozen=True)
class LogisticModel:
    bias: float
    weights: np.ndarray
    regularizer: RegularizerSpec = field(default_factory=RegularizerSpec)
    transform_id: str | None = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise NumericError("model parameters are not finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def k(self) -> int:
        return self.weights.shape[0]

    def to_dict(self) -> dict:
        return {
            "bias": self.bias,
            "weights": self.weights.tolist(),
            "regularizer": self.regularizer.to_dict(),
            "transform_id": self.transform_id,
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LogisticModel":
        return cls(
            bias=doc["bias"],
            weights=np.asarray(doc["weights"], dtype=np.float64),
            regularizer=RegularizerSpec.from_dict(doc["regularizer"]),
            transform_id=doc.get("transform_id"),
            training_meta=doc.get("training_meta", {}),
        )

    @property
    def model_id(self) -> str:
        doc = {"bias": self.bias, "weights": self.weights.tolist(), "transform_id": self.transform_id}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def save_model(model: LogisticModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2)
        fh.write("\n")


def load_model(path) -> LogisticModel:
    with open(path, encoding="utf-8") as fh:
        return LogisticModel.from_dict(json.load(fh))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check(pcs, labels, k):
    x = np.asarray(pcs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != k:
        raise DataError(f"dimension mismatch: model has {k} weights, data shape {x.shape}")
    if labels is not None:
        y = np.asarray(labels, dtype=np.float64)
        if y.shape != (x.shape[0],):
            raise DataError("labels are not aligned with rows")
        return x, y
    return x, None


_P_LO = np.finfo(np.float64).tiny
_P_HI = np.nextafter(1.0, 0.0)


def decision_function(model: LogisticModel, pcs) -> np.ndarray:
    """Logits ``w0 + w . pc``; same ranking as the probabilities, without saturation."""
    x, _ = _check(pcs, None, model.k)
    return model.bias + x @ model.weights


def predict_proba(model: LogisticModel, pcs) -> np.ndarray:
    """Class-1 probabilities, kept strictly inside (0, 1) even for extreme logits."""
    return np.clip(sigmoid(decision_function(model, pcs)), _P_LO, _P_HI)


def _objective(bias, w, x, y, reg):
    z = bias + x @ w
    # -[y log p + (1-y) log(1-p)] = softplus(z) - y z
    data = float(np.sum(np.logaddexp(0.0, z) - y * z))
    return data + reg.penalty(w), z


def _gradient(z, w, x, y, reg):
    r = sigmoid(z) - y
    return float(r.sum()), x.T @ r + reg.penalty_grad(w)


def loss(model: LogisticModel, pcs, labels) -> float:
    x, y = _check(pcs, labels, model.k)
    model.regularizer.check_length(model.k)
    return _objective(model.bias, model.weights, x, y, model.regularizer)[0]


def gradient(model: LogisticModel, pcs, labels) -> tuple[float, np.ndarray]:
    """Partial derivatives of :func:`loss` w.r.t. the bias and the weights."""
    x, y = _check(pcs, labels, model.k)
    model.regularizer.check_length(model.k)
    z = model.bias + x @ model.weights
    return _gradient(z, model.weights, x, y, model.regularizer)


def fit(
    pcs,
    labels,
    reg: RegularizerSpec | None = None,
    opts: SolverOptions | None = None,
    transform_id: str | None = None,
) -> LogisticModel:
    """Minimize the penalized cross-entropy with BFGS and Armijo backtracking.

    Starts from all-zero parameters. Stops when the gradient norm drops to
    ``opts.gtol``, after ``opts.max_iter`` iterations, or when no step along
    the steepest-descent direction lowers the loss any more (``stalled``).
    """
    reg = reg or RegularizerSpec()
    opts = opts or SolverOptions()
    x = np.asarray(pcs, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("fit expects a 2-D matrix of principal components")
    k = x.shape[1]
    x, y = _check(x, labels, k)
    reg.check_length(k)
    if y.size == 0 or y.min() == y.max():
        raise DataError("fit needs both classes present")

    def fg(theta):
        f, z = _objective(theta[0], theta[1:], x, y, reg)
        if not np.isfinite(f):
            return f, None
        g0, gw = _gradient(z, theta[1:], x, y, reg)
        return f, np.concatenate([[g0], gw])

    theta = np.zeros(k + 1)
    f, g = fg(theta)
    if not np.isfinite(f):
        raise NumericError("non-finite loss at the starting point")
    H = None
    status = "max_iter"
    it = 0
    for it in range(opts.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= opts.gtol:
            status = "converged"
            break
        if it == opts.max_iter:
            break
        step = _line_search(fg, theta, f, g, H, opts)
        if step is None and H is not None:
            H = None
            step = _line_search(fg, theta, f, g, H, opts)
        if step is None:
            status = "stalled"
            break
        theta_new, f_new, g_new = step
        slack = 16 * _EPS * max(1.0, abs(f))
        if not f_new <= f + slack:
            raise NumericError(f"accepted step increased the loss: {f} -> {f_new}")
        s = theta_new - theta
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(yv)) and sy > 0:
            if H is None:
                H = np.eye(k + 1) * (sy / float(yv @ yv))
            rho = 1.0 / sy
            Hy = H @ yv
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(yv @ Hy) + rho) * np.outer(s, s)
        theta, f, g = theta_new, f_new, g_new

    meta = {
        "iterations": it,
        "final_loss": f,
        "gradient_norm": float(np.linalg.norm(g)),
        "gtol": opts.gtol,
        "status": status,
        "converged": status == "converged",
    }
    return LogisticModel(
        bias=theta[0], weights=theta[1:], regularizer=reg, transform_id=transform_id, training_meta=meta
    )


def _line_search(fg, theta, f, g, H, opts):
    if H is None:
        p = -g
        t = min(1.0, 1.0 / float(np.linalg.norm(g)))
    else:
        p = -(H @ g)
        t = 1.0
    slope = float(g @ p)
    if not slope < 0:
        return None
    slack = 16 * _EPS * max(1.0, abs(f))
    for _ in range(opts.max_backtracks):
        cand = theta + t * p
        f_new, g_new = fg(cand)
        if np.isfinite(f_new) and f_new <= f + opts.armijo_c * t * slope + slack:
            if f_new < f or float(np.linalg.norm(g_new)) < float(np.linalg.norm(g)):
                return cand, f_new, g_new
            return None
        t *= 0.5
    return None


def default_anchor_ridge(cluster_size: int) -> float:
    return 1e-4 * cluster_size


def fit_cluster_anchors(
    pcs,
    labels,
    partition,
    anchor_ridge: float | None = None,
    opts: SolverOptions | None = None,
    workers: int = 1,
) -> list[np.ndarray]:
    """Fit one weight vector per cluster, in cluster order.

    ``partition`` is a :class:`~nireg.clustering.SubpopulationPartition` or a
    sequence of index arrays. Each cluster fit carries an l2 stabilizer of
    strength ``anchor_ridge`` (default ``1e-4 * cluster size``; 0 disables it).
    """
    clusters: Sequence[np.ndarray] = getattr(partition, "clusters", partition)
    x = np.asarray(pcs, dtype=np.float64)
    y = np.asarray(labels)
    for c, idx in enumerate(clusters):
        yc = y[idx]
        if yc.size == 0 or yc.min() == yc.max():
            raise DataError(f"cluster {c} contains a single class; cannot fit its anchor")

    def one(idx):
        ridge = default_anchor_ridge(len(idx)) if anchor_ridge is None else anchor_ridge
        reg = RegularizerSpec.l2(ridge) if ridge > 0 else RegularizerSpec()
        return fit(x[idx], y[idx], reg, opts).weights

    return ordered_map(one, list(clusters), workers)
