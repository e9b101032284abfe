"""Non-neural TSS reference predictor: ridge regression on pooled joint-crop features."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .annot_io import atomic_write
from .core import TSS_MAX, ArtssError, ValidationError
from .maskgen import HIST_BINS, otsu_bin, to_bins
from .seqbuild import JointSequence, PoolingError, masked_pool

FEATURE_SCHEMA = "artss-baseline-features/1"
HIST_FEATURE_BINS = 8
PER_CROP = ["mean", "var"] + [f"hist{i}" for i in range(HIST_FEATURE_BINS)] + ["fg_fraction"]
FEATURE_NAMES = (
    [f"mean_{n}" for n in PER_CROP] + [f"max_{n}" for n in PER_CROP] + ["n_valid"]
)
FEATURE_DIM = len(FEATURE_NAMES)  # 23


class ConditioningError(ArtssError):
    pass


def crop_features(crop: np.ndarray) -> np.ndarray:
    """mean, variance, 8-bin normalized histogram, Otsu foreground fraction."""
    c = np.asarray(crop, dtype=np.float64)
    hist, _ = np.histogram(c, bins=HIST_FEATURE_BINS, range=(0.0, 1.0))
    hist = hist / c.size
    bins = to_bins(c)
    counts = np.bincount(bins.ravel(), minlength=HIST_BINS)
    if np.count_nonzero(counts) < 2:
        fg = 0.0
    else:
        fg = float(np.mean(bins >= otsu_bin(counts)))
    return np.concatenate(([c.mean(), c.var()], hist, [fg]))


def featurize(seq: JointSequence) -> np.ndarray:
    """Fixed-length vector (``FEATURE_DIM``) built from valid slots only."""
    if seq.n_valid == 0:
        raise PoolingError(f"{seq.image_id}: no valid joints to featurize")
    valid = seq.validity_mask.astype(bool)
    per = np.zeros((seq.length, len(PER_CROP)))
    per[valid] = [crop_features(c) for c in seq.crops[valid]]
    return np.concatenate(
        (
            masked_pool(per, seq.validity_mask, "mean"),
            masked_pool(per, seq.validity_mask, "max"),
            [float(seq.n_valid)],
        )
    )


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    lam: float
    schema: str = FEATURE_SCHEMA

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def to_json(self) -> str:
        d = {
            "schema": self.schema,
            "lambda": self.lam,
            "intercept": float(self.intercept),
            "weights": [float(w) for w in self.weights],
        }
        return json.dumps(d, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RidgeModel":
        d = json.loads(text)
        if d.get("schema") != FEATURE_SCHEMA:
            raise ValidationError(f"model schema {d.get('schema')!r} != {FEATURE_SCHEMA!r}")
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["intercept"]), float(d["lambda"]))

    def save(self, path) -> None:
        atomic_write(path, self.to_json())

    @classmethod
    def load(cls, path) -> "RidgeModel":
        return cls.from_json(Path(path).read_text())


def fit(features: np.ndarray, targets: Sequence[float], lam: float = 1.0) -> RidgeModel:
    """Closed-form ridge with an unpenalized intercept.

    Solves ``(Xc^T Xc + lam I) w = Xc^T yc`` on centered data as the
    least-squares problem ``[Xc; sqrt(lam) I] w = [yc; 0]`` (SVD based),
    which avoids squaring the condition number.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValidationError(f"features {X.shape} and targets {y.shape} do not align")
    if lam < 0 or not np.isfinite(lam):
        raise ValidationError(f"lambda must be finite and >= 0, got {lam}")
    n, d = X.shape
    if n == 0:
        raise ValidationError("no training samples")
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc, yc = X - x_mean, y - y_mean
    if lam == 0:
        if np.linalg.matrix_rank(Xc) < d:
            raise ConditioningError("X^T X is singular at lambda = 0; use lambda > 0")
        A, b = Xc, yc
    else:
        A = np.vstack([Xc, np.sqrt(lam) * np.eye(d)])
        b = np.concatenate([yc, np.zeros(d)])
    w, *_ = np.linalg.lstsq(A, b, rcond=None)
    return RidgeModel(w, float(y_mean - x_mean @ w), float(lam))


def ridge_objective_grad(model: RidgeModel, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of ``||y - Xw - b||^2 + lam ||w||^2`` w.r.t. (w, b)."""
    r = y - X @ model.weights - model.intercept
    gw = -2.0 * X.T @ r + 2.0 * model.lam * model.weights
    gb = -2.0 * r.sum()
    return np.concatenate([gw, [gb]])


def predict(model: RidgeModel, features: np.ndarray, ceiling: float = TSS_MAX) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != model.dim:
        raise ValidationError(f"feature dimension {X.shape[1]} != model dimension {model.dim}")
    out = np.clip(X @ model.weights + model.intercept, 0.0, ceiling)
    return out[0] if single else out
