"""Detection scoring: IoU, greedy matching, per-class AP, mAP, accuracy, confusion."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import BoundingBox, JointClass, JointDetection, N_CLASSES, ProtocolError, ValidationError

DEFAULT_IOU = 0.5
BACKGROUND = N_CLASSES  # index of the background row/column in the confusion matrix


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    ax0, ay0, ax1, ay1 = a.clamped_corners()
    bx0, by0, bx1, by1 = b.clamped_corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union > 0 else 0.0


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValidationError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = a.astype(bool)
    b = b.astype(bool)
    union = np.count_nonzero(a | b)
    return np.count_nonzero(a & b) / union if union else 0.0


def iou(a: Union[BoundingBox, np.ndarray], b: Union[BoundingBox, np.ndarray]) -> float:
    """Intersection over union of two boxes or two same-frame binary masks."""
    if isinstance(a, BoundingBox) and isinstance(b, BoundingBox):
        return box_iou(a, b)
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray):
        return mask_iou(a, b)
    raise ValidationError(f"iou needs two boxes or two masks, got {type(a).__name__} and {type(b).__name__}")


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple  # (prediction, ground truth, iou)
    unmatched_predictions: tuple
    unmatched_ground_truths: tuple

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_predictions)

    @property
    def fn(self) -> int:
        return len(self.unmatched_ground_truths)


def _by_confidence(preds: Sequence[JointDetection]) -> list[int]:
    # stable: equal confidences keep input order
    return sorted(range(len(preds)), key=lambda i: -(preds[i].confidence or 0.0))


def match_indices(
    preds: Sequence[JointDetection], gts: Sequence[JointDetection], iou_threshold: float = DEFAULT_IOU
) -> tuple[list[tuple[int, int, float]], list[int], list[int]]:
    """Index-level greedy matching; see :func:`match`."""
    taken = [False] * len(gts)
    pairs, unmatched = [], []
    for pi in _by_confidence(preds):
        best, best_iou = -1, -1.0
        for gi, g in enumerate(gts):
            if taken[gi]:
                continue
            v = box_iou(preds[pi].box, g.box)
            if v >= iou_threshold and v > best_iou:
                best, best_iou = gi, v
        if best < 0:
            unmatched.append(pi)
        else:
            taken[best] = True
            pairs.append((pi, best, best_iou))
    return pairs, unmatched, [gi for gi, t in enumerate(taken) if not t]


def match(
    preds: Sequence[JointDetection], gts: Sequence[JointDetection], iou_threshold: float = DEFAULT_IOU
) -> MatchResult:
    """Greedy matching on one image and one class.

    Predictions go in descending confidence; each claims the unmatched ground
    truth with the highest IoU at or above the threshold, lowest index on ties.
    """
    preds, gts = list(preds), list(gts)
    pairs, up, ug = match_indices(preds, gts, iou_threshold)
    return MatchResult(
        tuple((preds[p], gts[g], v) for p, g, v in pairs),
        tuple(preds[p] for p in up),
        tuple(gts[g] for g in ug),
    )


def _group(dets: Iterable[JointDetection]) -> dict:
    out = defaultdict(list)
    for d in dets:
        out[(d.image_id, d.joint)].append(d)
    return out


def ranked_outcomes(
    preds: Sequence[JointDetection], gts: Sequence[JointDetection], iou_threshold: float = DEFAULT_IOU
) -> tuple[list[bool], int]:
    """TP/FP flags of all predictions in global confidence order, and N_pos.

    Matching happens per (image, class); the per-image greedy order equals the
    global order restricted to that image, so the flags are order-consistent.
    """
    preds, gts = list(preds), list(gts)
    g_groups = _group(gts)
    p_index = defaultdict(list)
    for i, p in enumerate(preds):
        p_index[(p.image_id, p.joint)].append(i)
    is_tp = [False] * len(preds)
    for key, idx in p_index.items():
        pairs, _, _ = match_indices([preds[i] for i in idx], g_groups.get(key, ()), iou_threshold)
        for local, _, _ in pairs:
            is_tp[idx[local]] = True
    order = _by_confidence(preds)
    return [is_tp[i] for i in order], len(gts)


def precision_recall(flags: Sequence[bool], n_pos: int) -> tuple[np.ndarray, np.ndarray]:
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        return np.zeros(0), np.zeros(0)
    tp = np.cumsum(flags)
    ranks = np.arange(1, flags.size + 1)
    precision = tp / ranks
    recall = tp / n_pos if n_pos else np.zeros(flags.size)
    return precision, recall


def ap_from_flags(flags: Sequence[bool], n_pos: int, interpolated: bool = False) -> Optional[float]:
    """Non-interpolated AP: mean over ground truths of precision at each TP rank.

    Unmatched ground truths contribute zero. ``interpolated`` switches to the
    all-point area under the monotone precision envelope. Returns ``None``
    when there are no ground truths.
    """
    if n_pos == 0:
        return None
    precision, recall = precision_recall(flags, n_pos)
    if precision.size == 0:
        return 0.0
    flags = np.asarray(flags, dtype=bool)
    if not interpolated:
        return float(precision[flags].sum() / n_pos)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float((steps * envelope).sum())


def average_precision(
    preds: Sequence[JointDetection],
    gts: Sequence[JointDetection],
    iou_threshold: float = DEFAULT_IOU,
    interpolated: bool = False,
) -> Optional[float]:
    """AP for a single class over the whole dataset; ``None`` if the class has no ground truth."""
    flags, n_pos = ranked_outcomes(preds, gts, iou_threshold)
    return ap_from_flags(flags, n_pos, interpolated)


def mean_average_precision(aps: Iterable[Optional[float]]) -> float:
    defined = [a for a in aps if a is not None]
    if not defined:
        raise ProtocolError("mAP undefined: no class has ground truth")
    return float(np.mean(defined))


def detection_accuracy(results: Iterable[MatchResult], mode: str = "matched_gt") -> float:
    """Identification accuracy over a matched dataset.

    ``matched_gt`` (default) is TP / N_pos, the fraction of ground-truth joints
    found; ``tp_over_all`` is TP / (TP + FP + FN).
    """
    tp = fp = fn = 0
    for r in results:
        tp += r.tp
        fp += r.fp
        fn += r.fn
    n_pos = tp + fn
    if n_pos == 0:
        raise ProtocolError("accuracy undefined: no ground-truth joints")
    if mode == "matched_gt":
        return tp / n_pos
    if mode == "tp_over_all":
        return tp / (tp + fp + fn)
    raise ValidationError(f"unknown accuracy mode {mode!r}")


def confusion_matrix(
    preds: Sequence[JointDetection],
    gts: Sequence[JointDetection],
    iou_threshold: float = DEFAULT_IOU,
) -> np.ndarray:
    """(N_CLASSES + 1)^2 counts, rows = ground truth, cols = prediction, last = background.

    Class-agnostic greedy matching per image, so a box found at the right
    place with the wrong label lands off the diagonal.
    """
    cm = np.zeros((N_CLASSES + 1, N_CLASSES + 1), dtype=np.int64)
    p_img, g_img = defaultdict(list), defaultdict(list)
    for p in preds:
        p_img[p.image_id].append(p)
    for g in gts:
        g_img[g.image_id].append(g)
    for image_id in sorted(set(p_img) | set(g_img)):
        res = match(p_img.get(image_id, ()), g_img.get(image_id, ()), iou_threshold)
        for p, g, _ in res.pairs:
            cm[int(g.joint), int(p.joint)] += 1
        for p in res.unmatched_predictions:
            cm[BACKGROUND, int(p.joint)] += 1
        for g in res.unmatched_ground_truths:
            cm[int(g.joint), BACKGROUND] += 1
    return cm


@dataclass
class ClassResult:
    ap: Optional[float]
    tp: int
    fp: int
    fn: int
    precision: tuple = ()
    recall: tuple = ()


@dataclass
class EvalReport:
    per_class: dict  # JointClass -> ClassResult
    map_score: Optional[float]
    accuracy: Optional[float]
    confusion: list  # (N_CLASSES+1) x (N_CLASSES+1) nested lists
    iou_threshold: float = DEFAULT_IOU
    interpolated: bool = False
    regression: Optional[dict] = None
    meta: dict = field(default_factory=dict)


def evaluate_detections(
    preds: Sequence[JointDetection],
    gts: Sequence[JointDetection],
    iou_threshold: float = DEFAULT_IOU,
    interpolated: bool = False,
    accuracy_mode: str = "matched_gt",
) -> EvalReport:
    for p in preds:
        if p.confidence is None:
            raise ValidationError(f"prediction for {p.image_id} has no confidence")
    per_class = {}
    results = []
    p_groups, g_groups = _group(preds), _group(gts)
    for jc in JointClass:
        cp = [p for p in preds if p.joint == jc]
        cg = [g for g in gts if g.joint == jc]
        flags, n_pos = ranked_outcomes(cp, cg, iou_threshold)
        precision, recall = precision_recall(flags, n_pos)
        class_results = [
            match(p_groups.get(key, ()), g_groups.get(key, ()), iou_threshold)
            for key in sorted(set(k for k in p_groups if k[1] == jc) | set(k for k in g_groups if k[1] == jc))
        ]
        results.extend(class_results)
        per_class[jc] = ClassResult(
            ap=ap_from_flags(flags, n_pos, interpolated),
            tp=sum(r.tp for r in class_results),
            fp=sum(r.fp for r in class_results),
            fn=sum(r.fn for r in class_results),
            precision=tuple(float(v) for v in precision),
            recall=tuple(float(v) for v in recall),
        )
    aps = [c.ap for c in per_class.values()]
    map_score = mean_average_precision(aps) if any(a is not None for a in aps) else None
    n_pos = sum(r.tp + r.fn for r in results)
    accuracy = detection_accuracy(results, accuracy_mode) if n_pos else None
    cm = confusion_matrix(preds, gts, iou_threshold)
    return EvalReport(
        per_class=per_class,
        map_score=map_score,
        accuracy=accuracy,
        confusion=cm.tolist(),
        iou_threshold=iou_threshold,
        interpolated=interpolated,
    )
