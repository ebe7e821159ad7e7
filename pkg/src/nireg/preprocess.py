"""Standardization followed by projection onto principal components."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from nireg.errors import DataError

SCALE_FLOOR = 1e-12
DEFAULT_RANK_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PcaTransform:
    mean: np.ndarray
    scale: np.ndarray
    components: np.ndarray  # k x d, orthonormal rows
    singular_values: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "components": self.components.tolist(),
            "singular_values": self.singular_values.tolist(),
            "k": self.k,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PcaTransform":
        comps = np.asarray(doc["components"], dtype=np.float64)
        if comps.ndim != 2 or comps.shape[0] != doc["k"]:
            raise DataError("PCA document: components do not match k")
        return cls(
            mean=np.asarray(doc["mean"], dtype=np.float64),
            scale=np.asarray(doc["scale"], dtype=np.float64),
            components=comps,
            singular_values=np.asarray(doc["singular_values"], dtype=np.float64),
        )

    @property
    def transform_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def fit_pca(train: np.ndarray, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> PcaTransform:
    """Fit mean/scale and the principal directions on ``train``.

    Components whose singular value is at most ``rank_tolerance`` times the
    largest are dropped. Each retained direction is oriented so that its
    largest-magnitude entry is positive.
    """
    x = np.asarray(train, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DataError("fit_pca needs a 2-D matrix with at least 2 rows")
    if not 0.0 < rank_tolerance < 1.0:
        raise DataError(f"rank_tolerance must lie in (0, 1), got {rank_tolerance}")
    if not np.all(np.isfinite(x)):
        raise DataError("fit_pca: non-finite input")
    n, d = x.shape
    mean = x.mean(axis=0)
    scale = np.maximum(x.std(axis=0), SCALE_FLOOR)
    z = (x - mean) / scale
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    if s.size == 0 or s[0] <= 0.0 or not np.any(z):
        raise DataError("no variance: all training rows are identical")
    k = int(np.sum(s > rank_tolerance * s[0]))
    k = max(1, min(k, n - 1, d))
    comps = vt[:k].copy()
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), lead])
    comps *= signs[:, None]
    return PcaTransform(mean=mean, scale=scale, components=comps, singular_values=s[:k].copy())


def apply_pca(t: PcaTransform, data: np.ndarray) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != t.d:
        raise DataError(f"dimension mismatch: transform expects {t.d} features, got {x.shape[1]}")
    return ((x - t.mean) / t.scale) @ t.components.T


def save_pca(t: PcaTransform, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(t.to_dict(), fh, indent=2)
        fh.write("\n")


def load_pca(path) -> PcaTransform:
    with open(path, encoding="utf-8") as fh:
        return PcaTransform.from_dict(json.load(fh))
