"""TSS regression scoring: MAE, RMSE, Huber, and Table-1 style fold reports."""
from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence, Union

import numpy as np

from .core import PairingError, ProtocolError, SharpScore, ValidationError

DEFAULT_DELTA = 1.0
METRICS = ("MAE", "RMSE", "Huber Loss")
TABLE_DECIMALS = 2

Values = Union[Sequence[float], Sequence[SharpScore], np.ndarray]


def paired_arrays(preds: Values, gts: Values) -> tuple[np.ndarray, np.ndarray]:
    """Align predictions and ground truths.

    Lists of :class:`SharpScore` pair by ``image_id``; plain numbers pair by
    position.
    """
    preds, gts = list(preds), list(gts)
    p_scores = bool(preds) and isinstance(preds[0], SharpScore)
    g_scores = bool(gts) and isinstance(gts[0], SharpScore)
    if p_scores or g_scores:
        if not (p_scores and g_scores):
            raise PairingError("cannot pair scored records with bare numbers")
        p_map = _by_id(preds, "prediction")
        g_map = _by_id(gts, "ground truth")
        unpaired = sorted(set(p_map) ^ set(g_map))
        if unpaired:
            raise PairingError(f"unpaired ids: {', '.join(unpaired[:20])}", unpaired)
        ids = sorted(g_map)
        p = np.array([p_map[i] for i in ids], dtype=np.float64)
        g = np.array([g_map[i] for i in ids], dtype=np.float64)
    else:
        if len(preds) != len(gts):
            raise PairingError(f"length mismatch: {len(preds)} predictions vs {len(gts)} ground truths")
        p = np.asarray(preds, dtype=np.float64)
        g = np.asarray(gts, dtype=np.float64)
    if p.size == 0:
        raise PairingError("no pairs to score")
    return p, g


def _by_id(scores: Sequence[SharpScore], what: str) -> dict:
    out = {}
    dup = []
    for s in scores:
        if s.image_id in out:
            dup.append(s.image_id)
        out[s.image_id] = s.tss
    if dup:
        raise PairingError(f"duplicate {what} ids: {', '.join(sorted(set(dup)))}", dup)
    return out


def mae(preds: Values, gts: Values) -> float:
    p, g = paired_arrays(preds, gts)
    return float(np.mean(np.abs(g - p)))


def rmse(preds: Values, gts: Values) -> float:
    p, g = paired_arrays(preds, gts)
    return float(math.sqrt(np.mean((g - p) ** 2)))


def huber_terms(residuals: np.ndarray, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """Per-sample Huber loss: quadratic within ``delta``, linear beyond."""
    if not delta > 0:
        raise ValidationError(f"huber delta must be positive, got {delta}")
    a = np.abs(np.asarray(residuals, dtype=np.float64))
    return np.where(a <= delta, 0.5 * a * a, delta * a - 0.5 * delta * delta)


def huber_grad(preds: np.ndarray, gts: np.ndarray, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """d/d(pred) of the per-sample loss: clip(pred - y, -delta, delta)."""
    return np.clip(np.asarray(preds, float) - np.asarray(gts, float), -delta, delta)


def huber(preds: Values, gts: Values, delta: float = DEFAULT_DELTA) -> float:
    """Mean Huber loss over pairs."""
    if not delta > 0:
        raise ValidationError(f"huber delta must be positive, got {delta}")
    p, g = paired_arrays(preds, gts)
    return float(np.mean(huber_terms(g - p, delta)))


def regression_metrics(preds: Values, gts: Values, delta: float = DEFAULT_DELTA) -> dict:
    p, g = paired_arrays(preds, gts)
    return {
        "MAE": mae(p, g),
        "RMSE": rmse(p, g),
        "Huber Loss": huber(p, g, delta),
        "delta": float(delta),
        "n": int(p.size),
    }


def round_half_up(x: float, decimals: int = TABLE_DECIMALS) -> Decimal:
    # repr() keeps the shortest decimal that round-trips, so 0.9500000000000001 stays above .95
    return Decimal(repr(float(x))).quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class FoldRow:
    model: str
    metric: str
    folds: tuple
    average: float


def fold_report(per_fold: Mapping[str, Sequence[float]], model: str = "", n_folds: int = 3) -> list[FoldRow]:
    """One row per metric with the per-fold values and their arithmetic mean.

    ``per_fold`` maps a metric name to its fold values in fold order.
    """
    if not per_fold:
        raise ProtocolError("fold report needs at least one metric")
    rows = []
    for metric, values in per_fold.items():
        vals = [v for v in values]
        if len(vals) != n_folds or any(v is None for v in vals):
            raise ProtocolError(f"{metric}: expected {n_folds} fold values, got {vals}")
        vals = [float(v) for v in vals]
        rows.append(FoldRow(model, metric, tuple(vals), math.fsum(vals) / n_folds))
    return rows


def format_fold_table(rows: Sequence[FoldRow], decimals: int = TABLE_DECIMALS) -> list[list[str]]:
    """Table-1 layout: Model, Loss, Fold 1..k, Average; model name printed once per block."""
    if not rows:
        return []
    k = len(rows[0].folds)
    header = ["Model", "Loss"] + [f"Fold {i}" for i in range(1, k + 1)] + ["Average"]
    out = [header]
    last_model = None
    for r in rows:
        name = r.model if r.model != last_model else ""
        last_model = r.model
        cells = [str(round_half_up(v, decimals)) for v in r.folds]
        out.append([name, r.metric] + cells + [str(round_half_up(r.average, decimals))])
    return out
