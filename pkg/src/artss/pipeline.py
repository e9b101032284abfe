"""Stage functions behind the CLI. Per-image work is top-level so it can run in worker processes."""
from __future__ import annotations

import csv
import io
import json
import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from PIL import Image

from . import annot_io, baseline, regress_eval
from .augment import AugmentConfig, AugmentParams, apply_augment, make_rng, sample_params, transform_box
from .core import (
    ArtssError,
    DatasetSplit,
    EXTERNAL_TEST,
    JointDetection,
    SharpScore,
    Side,
    StageError,
    ValidationError,
    make_splits,
)
from .detect_eval import evaluate_detections, mask_iou
from .imgproc import (
    CanonicalImage,
    EstimationError,
    estimate_orientation,
    load_image,
    reorient,
    resize,
    save_png,
)
from .maskgen import MaskParams, generate_mask
from .plots import pr_curves_svg
from .seqbuild import JointSequence, build_sequence, max_sequence_length, write_sequences

log = logging.getLogger(__name__)


def run_jobs(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """Map ``fn`` over ``items`` preserving order; ``jobs > 1`` uses worker processes."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# --- preprocess -----------------------------------------------------------------


@dataclass(frozen=True)
class PreprocessTask:
    row: annot_io.ManifestRow
    out_dir: str
    target: tuple
    labels_dir: Optional[str] = None


def preprocess_one(task: PreprocessTask) -> dict:
    row = task.row
    try:
        rec = load_image(row.path, row.id, side=row.side)
    except (OSError, ArtssError) as exc:
        raise StageError("preprocess", ArtssError(f"{row.id}: cannot load {row.path}: {exc}")) from exc
    canon = resize(rec, *task.target)
    if row.orientation_deg is not None:
        current, source = row.orientation_deg, "manifest"
    else:
        try:
            current, source = estimate_orientation(canon), "moments"
        except EstimationError:
            current, source = 90.0, "fallback"
    out = reorient(canon, current)
    save_png(out.pixels, Path(task.out_dir) / f"{row.id}.png")
    if task.labels_dir is not None:
        src = Path(task.labels_dir) / f"{row.id}.txt"
        if src.exists():
            boxes = annot_io.parse_annotations(src, row.id, _frame_side(row.side))
            params = AugmentParams(rotation=out.orientation_applied)
            moved = []
            for d in boxes:
                nb = transform_box(d.box, params, canon.width, canon.height)
                if nb is not None:
                    moved.append(replace(d, box=nb))
            annot_io.write_boxes(moved, Path(task.out_dir) / "labels" / f"{row.id}.txt")
    return {
        "id": row.id,
        "orientation_deg": current,
        "source": source,
        "applied_deg": out.orientation_applied,
    }


def _frame_side(side: Side) -> Optional[Side]:
    return side if side in (Side.LEFT, Side.RIGHT) else None


def preprocess(rows, out_dir, target=(640, 640), labels_dir=None, jobs=1) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [PreprocessTask(r, str(out_dir), tuple(target), labels_dir and str(labels_dir)) for r in rows]
    logs = run_jobs(preprocess_one, tasks, jobs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "orientation_deg", "source", "applied_deg"])
    for e in logs:
        w.writerow([e["id"], f"{e['orientation_deg']:.6f}", e["source"], f"{e['applied_deg']:.6f}"])
    annot_io.atomic_write(out_dir / "orientation_log.csv", buf.getvalue())
    return logs


# --- masks ------------------------------------------------------------------------


def load_canonical(path) -> CanonicalImage:
    path = Path(path)
    rec = load_image(path, path.stem)
    return CanonicalImage(rec.pixels / 255.0, id=rec.id)


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(mask.astype(bool)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 0).astype(np.uint8)


@dataclass(frozen=True)
class MaskTask:
    path: str
    out_dir: str
    params: MaskParams


def mask_one(task: MaskTask) -> dict:
    img = load_canonical(task.path)
    info = {"id": img.id, "source": Path(task.path).name, "params": task.params.as_dict(img.width)}
    try:
        mask = generate_mask(img, task.params)
    except StageError as exc:
        info.update(status="failed", stage=exc.stage, error=str(exc.cause))
    else:
        save_mask(mask, Path(task.out_dir) / f"{img.id}.png")
        info.update(status="ok", area_fraction=round(float(mask.mean()), 6))
    annot_io.atomic_write(Path(task.out_dir) / f"{img.id}.mask.json", json.dumps(info, sort_keys=True, indent=2) + "\n")
    return info


def make_masks(in_dir, out_dir, params: MaskParams = MaskParams(), jobs=1) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(p for p in Path(in_dir).glob("*.png"))
    return run_jobs(mask_one, [MaskTask(str(p), str(out_dir), params) for p in paths], jobs)


# --- evaluation -----------------------------------------------------------------------


def eval_segmentation(pred_dir, gt_dir) -> dict:
    gts = {p.stem: p for p in sorted(Path(gt_dir).glob("*.png"))}
    if not gts:
        raise ValidationError(f"no ground-truth masks (*.png) in {gt_dir}")
    per_image, missing = {}, []
    for key, gpath in gts.items():
        g = load_mask(gpath)
        ppath = Path(pred_dir) / gpath.name
        if not ppath.exists():
            missing.append(key)
            per_image[key] = 0.0
            continue
        per_image[key] = mask_iou(load_mask(ppath), g)
    vals = list(per_image.values())
    return {
        "mean_iou": round(float(np.mean(vals)), 6),
        "per_image": {k: round(v, 6) for k, v in per_image.items()},
        "missing_predictions": missing,
        "n": len(vals),
    }


def eval_detection(pred_dir, gt_dir, out_dir, iou_threshold=0.5, interpolated=False, default_confidence=None):
    gts = annot_io.read_box_dir(gt_dir)
    preds = annot_io.read_box_dir(pred_dir, predictions=True, default_confidence=default_confidence)
    report = evaluate_detections(preds, gts, iou_threshold, interpolated)
    out_dir = Path(out_dir)
    annot_io.write_report(report, out_dir / "report.json", "json")
    annot_io.write_report(report, out_dir / "report.csv", "csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "rank", "recall", "precision"])
    curves = {}
    for jc, c in sorted(report.per_class.items(), key=lambda kv: int(kv[0])):
        for k, (r, p) in enumerate(zip(c.recall, c.precision), start=1):
            w.writerow([jc.name, k, f"{r:.6f}", f"{p:.6f}"])
        curves[jc.name] = (c.recall, c.precision)
    annot_io.atomic_write(out_dir / "pr_curves.csv", buf.getvalue())
    annot_io.atomic_write(out_dir / "pr_curves.svg", pr_curves_svg(curves, f"PR curves (IoU >= {iou_threshold:g})"))
    return report


# --- sequences ------------------------------------------------------------------------


def group_patients(image_ids: Iterable[str]) -> dict:
    """patient id -> sorted image ids; ``p1_L``/``p1_R`` share patient ``p1``."""
    groups = defaultdict(list)
    for i in sorted(image_ids):
        groups[annot_io.split_side_suffix(i)[0]].append(i)
    return dict(groups)


def build_sequences(
    det_dir, img_dir, crop_size=64, max_len=None, sides=None, masks_dir=None
) -> list[JointSequence]:
    """One sequence per patient from ``<image_id>.txt`` boxes and ``<image_id>.png`` frames."""
    sides = sides or {}
    img_paths = {p.stem: p for p in sorted(Path(img_dir).glob("*.png"))}
    dets = {}
    for p in sorted(Path(det_dir).glob("*.txt")):
        if p.stem not in img_paths:
            raise ValidationError(f"no image {p.stem}.png for detections {p.name}")
        dets[p.stem] = annot_io.parse_annotations(p, frame_side=_frame_side(sides.get(p.stem, Side.BOTH)))
    patients = group_patients(dets)
    per_patient = {pid: [d for i in ids for d in dets[i]] for pid, ids in patients.items()}
    L = max_len if max_len is not None else max_sequence_length(per_patient)
    seqs = []
    for pid, ids in patients.items():
        frames = {}
        for i in ids:
            img = load_canonical(img_paths[i])
            if masks_dir is not None and (Path(masks_dir) / f"{i}.png").exists():
                img = img.with_pixels(img.pixels * load_mask(Path(masks_dir) / f"{i}.png"))
            for d in dets[i]:
                if d.side in frames and frames[d.side] is not img:
                    raise ValidationError(f"patient {pid}: two images claim the {d.side.value} hand")
                frames[d.side] = img
        try:
            seqs.append(build_sequence(frames, per_patient[pid], L, crop_size, image_id=pid))
        except ArtssError as exc:
            raise StageError("build-seq", ArtssError(f"patient {pid}: {exc}")) from exc
    return seqs


# --- augmentation ------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentTask:
    path: str
    out_dir: str
    seed: int
    count: int
    cfg: AugmentConfig


def augment_one(task: AugmentTask) -> list[dict]:
    img = load_canonical(task.path)
    base, suffix = annot_io.split_side_suffix(img.id)
    if suffix is not None:
        img = img.with_pixels(img.pixels, side=suffix)
    label = Path(task.path).with_suffix(".txt")
    boxes = annot_io.parse_annotations(label, img.id) if label.exists() else []
    out = []
    for k in range(task.count):
        params = sample_params(make_rng(task.seed, img.id, k), task.cfg)
        res = apply_augment(img, boxes, params, task.cfg)
        side = res.image.side
        name = f"{base}_aug{k}" + (f"_{side.suffix}" if side in (Side.LEFT, Side.RIGHT) else "")
        save_png(res.image.pixels, Path(task.out_dir) / f"{name}.png")
        annot_io.write_boxes(res.boxes, Path(task.out_dir) / f"{name}.txt")
        out.append({
            "id": name,
            "source": img.id,
            "rotation": round(params.rotation, 6),
            "dx": round(params.dx, 6),
            "dy": round(params.dy, 6),
            "flip": params.flip,
            "brightness": round(params.brightness, 6),
            "boxes_dropped": res.dropped,
            "all_dropped": res.all_dropped,
        })
    return out


def augment_dir(in_dir, out_dir, seed, count, cfg=AugmentConfig(), jobs=1) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(Path(in_dir).glob("*.png"))
    tasks = [AugmentTask(str(p), str(out_dir), seed, count, cfg) for p in paths]
    records = [r for batch in run_jobs(augment_one, tasks, jobs) for r in batch]
    annot_io.atomic_write(
        out_dir / "augment_log.json",
        json.dumps({"config": cfg.to_dict(), "seed": seed, "records": records}, sort_keys=True, indent=2) + "\n",
    )
    return records


# --- TSS regression ------------------------------------------------------------------------


def tss_table_csv(rows: Sequence[regress_eval.FoldRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in regress_eval.format_fold_table(rows):
        w.writerow(r)
    return buf.getvalue()


def tss_table_json(rows: Sequence[regress_eval.FoldRow], extra: Optional[dict] = None) -> str:
    d = {
        "rows": [
            {
                "model": r.model,
                "metric": r.metric,
                "folds": [round(v, 6) for v in r.folds],
                "average": round(r.average, 6),
            }
            for r in rows
        ]
    }
    if extra:
        d.update(extra)
    return json.dumps(d, sort_keys=True, indent=2) + "\n"


def fold_metrics(groups: dict, truth: Sequence[SharpScore], delta: float) -> dict:
    """Per-fold MAE/RMSE/Huber, keyed by metric, in fold order."""
    truth_map = {s.image_id: s for s in truth}
    per = {m: [] for m in regress_eval.METRICS}
    for fold in sorted(groups):
        preds = groups[fold]
        gts = []
        for p in preds:
            if p.image_id not in truth_map:
                raise ValidationError(f"fold {fold}: no ground truth for {p.image_id}")
            gts.append(truth_map[p.image_id])
        m = regress_eval.regression_metrics(preds, gts, delta)
        for k in regress_eval.METRICS:
            per[k].append(m[k])
    return per


def eval_tss(pred_csv, gt_csv, delta=1.0, folds_dir=None, model="") -> tuple[list, dict]:
    truth = annot_io.parse_scores(gt_csv)
    groups = annot_io.parse_fold_predictions(pred_csv)
    if None in groups:
        preds = groups[None]
        if folds_dir is not None:
            splits = [s for s in annot_io.read_splits(folds_dir) if s.fold_id != EXTERNAL_TEST]
            by_id = {p.image_id: p for p in preds}
            groups = {}
            for s in sorted(splits, key=lambda s: s.fold_id):
                # a fold-less prediction file holds out-of-fold predictions
                groups[s.fold_id] = [by_id[i] for i in s.val_ids if i in by_id]
        else:
            truth_ids = {p.image_id for p in preds}
            overall = regress_eval.regression_metrics(preds, [t for t in truth if t.image_id in truth_ids], delta)
            rows = [regress_eval.FoldRow(model, k, (overall[k],), overall[k]) for k in regress_eval.METRICS]
            return rows, {"n": overall["n"], "delta": delta}
    per = fold_metrics(groups, truth, delta)
    rows = regress_eval.fold_report(per, model, n_folds=len(groups))
    return rows, {"folds": sorted(groups), "delta": delta}


# --- baseline ---------------------------------------------------------------------------


def features_for(seqs: Sequence[JointSequence]) -> tuple[list[str], np.ndarray]:
    ids = [s.image_id for s in seqs]
    return ids, np.array([baseline.featurize(s) for s in seqs])


def patient_scores(scores: Sequence[SharpScore]) -> dict:
    """Per-patient TSS: the image score, or the sum over a patient's ``_L``/``_R`` hand images."""
    out = defaultdict(float)
    for s in scores:
        out[annot_io.split_side_suffix(s.image_id)[0]] += s.tss
    return dict(out)


# --- run-all ---------------------------------------------------------------------------------


def run_all(manifest, out_dir, seed=0, labels_dir=None, target=(640, 640), crop_size=64,
            lam=1.0, delta=1.0, mask_params=MaskParams(), jobs=1) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = annot_io.parse_manifest(manifest)
    labels_dir = Path(labels_dir) if labels_dir else Path(manifest).parent / "labels"
    sides = {r.id: r.side for r in rows}

    stage = "preprocess"
    try:
        preprocess(rows, out / "canonical", target, labels_dir if labels_dir.exists() else None, jobs)
        stage = "mask"
        mask_info = make_masks(out / "canonical", out / "masks", mask_params, jobs)
        stage = "split"
        splits = make_splits([r.id for r in rows], seed)
        annot_io.write_splits(splits, out / "splits")
        stage = "build-seq"
        seqs = build_sequences(out / "canonical" / "labels", out / "canonical", crop_size,
                               sides=sides, masks_dir=out / "masks")
        write_sequences(seqs, out / "sequences.bin")
        stage = "baseline"
        ids, X = features_for(seqs)
        scores = [r.score for r in rows if r.score is not None]
        y_map = patient_scores(scores)
        row_of = {pid: k for k, pid in enumerate(ids)}

        def subset(image_ids):
            pids = sorted({annot_io.split_side_suffix(i)[0] for i in image_ids} & set(row_of) & set(y_map))
            return pids, X[[row_of[p] for p in pids]], np.array([y_map[p] for p in pids])

        pred_rows = []
        per = {m: [] for m in regress_eval.METRICS}
        for s in splits:
            if s.fold_id == EXTERNAL_TEST:
                continue
            tr_ids, Xtr, ytr = subset(s.train_ids)
            te_ids, Xte, yte = subset(s.test_ids)
            model = baseline.fit(Xtr, ytr, lam)
            p = baseline.predict(model, Xte)
            for pid, v in zip(te_ids, p):
                pred_rows.append((pid, float(v), s.fold_id))
            m = regress_eval.regression_metrics(p, yte, delta)
            for k in regress_eval.METRICS:
                per[k].append(m[k])
        ext = next(s for s in splits if s.fold_id == EXTERNAL_TEST)
        _, Xall, yall = subset(ext.train_ids)
        final = baseline.fit(Xall, yall, lam)
        final.save(out / "baseline_model.json")

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "tss", "fold"])
        for pid, v, f in pred_rows:
            w.writerow([pid, repr(v), f])
        annot_io.atomic_write(out / "tss_predictions.csv", buf.getvalue())

        stage = "report"
        table = regress_eval.fold_report(per, "Ridge baseline")
        annot_io.atomic_write(out / "tss_report.csv", tss_table_csv(table))
        summary = {
            "n_images": len(rows),
            "n_sequences": len(seqs),
            "sequence_length": seqs[0].length if seqs else 0,
            "masks_failed": sorted(i["id"] for i in mask_info if i["status"] != "ok"),
            "seed": seed,
        }
        annot_io.atomic_write(out / "tss_report.json", tss_table_json(table, summary))
    except StageError:
        raise
    except ArtssError as exc:
        raise StageError(stage, exc) from exc
    return summary
