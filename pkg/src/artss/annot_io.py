"""Readers and writers for annotations, predictions, scores, manifests, splits, and reports.

Box files hold one detection per line, ``class cx cy w h [confidence]``, all
coordinates normalized to the image size. Class indices follow
:class:`artss.core.JointClass` (0 = PI ... 10 = WRIST).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .core import (
    BoundingBox,
    DatasetSplit,
    Gender,
    JointClass,
    JointDetection,
    N_CLASSES,
    ParseError,
    SchemaError,
    SharpScore,
    Side,
    TSS_MAX,
    ValidationError,
    average_readers,
)
from .detect_eval import ClassResult, EvalReport

PathLike = Union[str, Path]
MANIFEST_COLUMNS = ("id", "path", "age", "gender", "side", "reader_a", "reader_b")
FLOAT_FMT = "{:.6f}"


def atomic_write(path: PathLike, data: Union[str, bytes]) -> None:
    """Write via a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path: PathLike) -> str:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read: {exc.strerror or exc}", path=path) from exc
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8 text ({exc.reason})", path=path) from exc


# --- side naming -------------------------------------------------------------


def split_side_suffix(image_id: str) -> tuple[str, Optional[Side]]:
    """``p01_L`` -> ("p01", LEFT); ids without a hand suffix return (id, None)."""
    if len(image_id) > 2 and image_id[-2] == "_" and image_id[-1] in "LR":
        return image_id[:-2], Side.LEFT if image_id[-1] == "L" else Side.RIGHT
    return image_id, None


def hand_image_id(patient_id: str, side: Side) -> str:
    return f"{patient_id}_{side.suffix}"


def infer_side(image_id: str, box: BoundingBox, frame_side: Optional[Side] = None) -> Side:
    """Hand side of one detection.

    An explicit single-hand frame side wins, then the ``_L``/``_R`` id suffix.
    For two-hand frames the radiographic convention applies: the patient's
    left hand appears on the viewer's right.
    """
    if frame_side in (Side.LEFT, Side.RIGHT):
        return frame_side
    _, suffix = split_side_suffix(image_id)
    if suffix is not None:
        return suffix
    return Side.LEFT if box.cx >= 0.5 else Side.RIGHT


# --- box files -----------------------------------------------------------------


def _parse_number(tok: str, field: str, lineno: int, path) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"field {field}: not a number: {tok[:32]!r}", lineno, path) from None
    if not math.isfinite(v):
        raise ParseError(f"field {field}: not finite: {tok[:32]!r}", lineno, path)
    return v


def parse_box_text(
    text: str,
    image_id: str,
    confidence: str = "forbidden",
    frame_side: Optional[Side] = None,
    default_confidence: Optional[float] = None,
    path=None,
) -> list[JointDetection]:
    """Parse box lines. ``confidence`` is ``forbidden`` (ground truth) or ``required`` (predictions).

    With ``required``, a ``default_confidence`` lets 5-field lines through.
    """
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        toks = line.split()
        if not toks:
            continue
        n = len(toks)
        if confidence == "forbidden" and n != 5:
            raise ParseError(f"expected 5 fields 'class cx cy w h', got {n}", lineno, path)
        if confidence == "required" and not (n == 6 or (n == 5 and default_confidence is not None)):
            raise ParseError(f"expected 6 fields 'class cx cy w h conf', got {n}", lineno, path)
        try:
            cls = int(toks[0])
        except ValueError:
            raise ParseError(f"field class: not an integer: {toks[0][:32]!r}", lineno, path) from None
        if not 0 <= cls < N_CLASSES:
            raise ValidationError(f"line {lineno}: field class={cls} outside [0, {N_CLASSES - 1}]")
        cx, cy, w, h = (_parse_number(t, f, lineno, path) for t, f in zip(toks[1:5], ("cx", "cy", "w", "h")))
        conf = None
        if confidence == "required":
            conf = _parse_number(toks[5], "confidence", lineno, path) if n == 6 else default_confidence
            if not 0.0 <= conf <= 1.0:
                raise ValidationError(f"line {lineno}: field confidence={conf} outside [0, 1]")
        try:
            box = BoundingBox(cx, cy, w, h)
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        out.append(JointDetection(image_id, JointClass(cls), box, infer_side(image_id, box, frame_side), conf))
    return out


def parse_annotations(path: PathLike, image_id: Optional[str] = None, frame_side: Optional[Side] = None):
    """Ground-truth boxes from one ``<image_id>.txt`` file; an empty file means no visible joints."""
    path = Path(path)
    return parse_box_text(_read_text(path), image_id or path.stem, "forbidden", frame_side, path=path)


def parse_predictions(
    path: PathLike,
    image_id: Optional[str] = None,
    frame_side: Optional[Side] = None,
    default_confidence: Optional[float] = None,
):
    path = Path(path)
    return parse_box_text(
        _read_text(path), image_id or path.stem, "required", frame_side, default_confidence, path=path
    )


def format_boxes(dets: Iterable[JointDetection]) -> str:
    lines = []
    for d in dets:
        b = d.box
        fields = [str(int(d.joint))] + [repr(float(v)) for v in (b.cx, b.cy, b.w, b.h)]
        if d.confidence is not None:
            fields.append(repr(float(d.confidence)))
        lines.append(" ".join(fields))
    return "".join(line + "\n" for line in lines)


def write_boxes(dets: Iterable[JointDetection], path: PathLike) -> None:
    atomic_write(path, format_boxes(dets))


def read_box_dir(
    directory: PathLike,
    predictions: bool = False,
    default_confidence: Optional[float] = None,
    sides: Optional[dict] = None,
) -> list[JointDetection]:
    """All ``*.txt`` files in a directory, sorted by name."""
    out = []
    sides = sides or {}
    for p in sorted(Path(directory).glob("*.txt")):
        fs = sides.get(p.stem)
        if predictions:
            out.extend(parse_predictions(p, frame_side=fs, default_confidence=default_confidence))
        else:
            out.extend(parse_annotations(p, frame_side=fs))
    return out


# --- score CSVs ------------------------------------------------------------------


def _csv_rows(text: str, path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    if "\x00" in text:
        raise ParseError("NUL byte in CSV", path=path)
    try:
        rows = list(csv.reader(io.StringIO(text, newline="")))
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}", path=path) from None
    numbered = [(i, r) for i, r in enumerate(rows, start=1) if any(c.strip() for c in r)]
    if not numbered:
        raise SchemaError(f"{path or 'csv'}: empty file, no header")
    header = [c.strip() for c in numbered[0][1]]
    return header, numbered[1:]


def _opt_number(cell: str, field: str, lineno: int, path) -> Optional[float]:
    cell = cell.strip()
    if cell == "":
        return None
    return _parse_number(cell, field, lineno, path)


def parse_scores_text(text: str, path=None, ceiling: float = TSS_MAX) -> list[SharpScore]:
    header, rows = _csv_rows(text, path)
    if header[:3] == ["id", "reader_a", "reader_b"]:
        form = "readers"
    elif header[:2] == ["id", "tss"]:
        form = "tss"
    elif header[:1] == ["id"] and all(c in header for c in MANIFEST_COLUMNS):
        # a full manifest: take the reader columns, skip unscored rows
        scored = [r.score for r in parse_manifest_text(text, path)]
        return [s for s in scored if s is not None]
    else:
        raise SchemaError(f"{path or 'csv'}: header must start with 'id,reader_a,reader_b' or 'id,tss', got {header}")
    width = len(header)
    out = []
    seen = set()
    for lineno, row in rows:
        if len(row) != width:
            raise ParseError(f"expected {width} columns, got {len(row)}", lineno, path)
        image_id = row[0].strip()
        if not image_id:
            raise ParseError("empty id", lineno, path)
        if image_id in seen:
            raise ParseError(f"duplicate id {image_id!r}", lineno, path)
        seen.add(image_id)
        try:
            if form == "readers":
                a = _opt_number(row[1], "reader_a", lineno, path)
                b = _opt_number(row[2], "reader_b", lineno, path)
                if a is None or b is None:
                    raise ParseError("both reader scores are required", lineno, path)
                out.append(SharpScore(image_id, average_readers(a, b, ceiling), a, b, ceiling))
            else:
                t = _opt_number(row[1], "tss", lineno, path)
                if t is None:
                    raise ParseError("tss is required", lineno, path)
                out.append(SharpScore(image_id, t, ceiling=ceiling))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno} ({image_id}): {exc}") from None
    return out


def parse_scores(path: PathLike, ceiling: float = TSS_MAX) -> list[SharpScore]:
    """``id,reader_a,reader_b`` (averaged into tss) or ``id,tss`` CSV."""
    return parse_scores_text(_read_text(path), path=path, ceiling=ceiling)


def format_scores(scores: Sequence[SharpScore], extra: Optional[dict] = None) -> str:
    """Readers form when every record carries both readers, ``id,tss`` otherwise.

    ``extra`` maps a column name to ``{id: value}`` appended after the score columns.
    """
    readers = bool(scores) and all(s.reader_a is not None and s.reader_b is not None for s in scores)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    extra = extra or {}
    w.writerow((["id", "reader_a", "reader_b"] if readers else ["id", "tss"]) + list(extra))
    for s in scores:
        cells = [s.image_id] + ([_num(s.reader_a), _num(s.reader_b)] if readers else [_num(s.tss)])
        w.writerow(cells + [str(extra[c].get(s.image_id, "")) for c in extra])
    return buf.getvalue()


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


def write_scores(scores: Sequence[SharpScore], path: PathLike, extra: Optional[dict] = None) -> None:
    atomic_write(path, format_scores(scores, extra))


def parse_fold_predictions(path: PathLike) -> dict:
    """``id,tss[,fold]`` predictions grouped by fold (``None`` when the column is absent)."""
    return parse_fold_predictions_text(_read_text(path), path)


def parse_fold_predictions_text(text: str, path=None) -> dict:
    header, rows = _csv_rows(text, path)
    if header[:2] != ["id", "tss"]:
        raise SchemaError(f"{path or 'csv'}: prediction CSV header must start with 'id,tss', got {header}")
    if "fold" not in header:
        return {None: parse_scores_text(text, path)}
    fi = header.index("fold")
    groups: dict = {}
    for lineno, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", lineno, path)
        try:
            fold = int(row[fi])
        except ValueError:
            raise ParseError(f"fold: not an integer: {row[fi]!r}", lineno, path) from None
        t = _opt_number(row[1], "tss", lineno, path)
        if t is None:
            raise ParseError("tss is required", lineno, path)
        image_id = row[0].strip()
        if not image_id:
            raise ParseError("empty id", lineno, path)
        group = groups.setdefault(fold, [])
        if any(g.image_id == image_id for g in group):
            raise ParseError(f"duplicate id {image_id!r} in fold {fold}", lineno, path)
        try:
            group.append(SharpScore(image_id, t))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno} ({image_id}): {exc}") from None
    return groups


# --- manifest -------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    id: str
    path: str
    age: Optional[float] = None
    gender: Optional[Gender] = None
    side: Side = Side.BOTH
    reader_a: Optional[float] = None
    reader_b: Optional[float] = None
    orientation_deg: Optional[float] = None

    @property
    def score(self) -> Optional[SharpScore]:
        if self.reader_a is None or self.reader_b is None:
            return None
        return SharpScore.from_readers(self.id, self.reader_a, self.reader_b)


def parse_manifest(path: PathLike) -> list[ManifestRow]:
    """Manifest CSV; relative image paths resolve against the manifest's directory."""
    path = Path(path)
    return parse_manifest_text(_read_text(path), path, base=path.parent)


def parse_manifest_text(text: str, path=None, base: Optional[PathLike] = None) -> list[ManifestRow]:
    header, rows = _csv_rows(text, path)
    missing = [c for c in MANIFEST_COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"{path or 'csv'}: manifest missing columns {missing}")
    col = {c: header.index(c) for c in header}
    out, seen = [], set()
    for lineno, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", lineno, path)
        get = lambda c: row[col[c]].strip() if c in col else ""  # noqa: E731
        rid = get("id")
        if not rid:
            raise ParseError("empty id", lineno, path)
        if rid in seen:
            raise ParseError(f"duplicate id {rid!r}", lineno, path)
        seen.add(rid)
        try:
            gender = Gender(get("gender").lower()) if get("gender") else None
            side = Side(get("side").lower()) if get("side") else Side.BOTH
        except ValueError as exc:
            raise ParseError(str(exc), lineno, path) from None
        img_path = get("path")
        if img_path and base is not None and not os.path.isabs(img_path):
            img_path = str(Path(base) / img_path)
        ra = _opt_number(get("reader_a"), "reader_a", lineno, path)
        rb = _opt_number(get("reader_b"), "reader_b", lineno, path)
        orient = _opt_number(get("orientation_deg"), "orientation_deg", lineno, path)
        if orient is not None and not 0.0 <= orient < 180.0:
            raise ValidationError(f"line {lineno}: orientation_deg={orient} outside [0, 180)")
        row_obj = ManifestRow(
            rid, img_path, _opt_number(get("age"), "age", lineno, path), gender, side, ra, rb, orient
        )
        try:
            row_obj.score  # validates reader ranges
        except ValidationError as exc:
            raise ValidationError(f"line {lineno} ({rid}): {exc}") from None
        out.append(row_obj)
    return out


def format_manifest(rows: Sequence[ManifestRow], base: Optional[PathLike] = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(MANIFEST_COLUMNS)
    with_orient = any(r.orientation_deg is not None for r in rows)
    if with_orient:
        cols.append("orientation_deg")
    w.writerow(cols)
    for r in rows:
        p = r.path
        if base is not None and p:
            p = os.path.relpath(p, base)
        cells = [
            r.id,
            p,
            "" if r.age is None else _num(r.age),
            "" if r.gender is None else r.gender.value,
            r.side.value,
            "" if r.reader_a is None else _num(r.reader_a),
            "" if r.reader_b is None else _num(r.reader_b),
        ]
        if with_orient:
            cells.append("" if r.orientation_deg is None else _num(r.orientation_deg))
        w.writerow(cells)
    return buf.getvalue()


# --- splits ---------------------------------------------------------------------


def split_filename(split: DatasetSplit) -> str:
    return "external_test.json" if split.fold_id == "EXTERNAL_TEST" else f"fold_{split.fold_id}.json"


def write_splits(splits: Sequence[DatasetSplit], out_dir: PathLike) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    for s in splits:
        p = out_dir / split_filename(s)
        atomic_write(p, json.dumps(s.to_json_dict(), indent=None, separators=(",", ":")) + "\n")
        paths.append(p)
    return paths


def read_splits_file(path: PathLike) -> DatasetSplit:
    try:
        return DatasetSplit.from_json_dict(json.loads(_read_text(path)))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"bad split file: {exc}", path=path) from None


def read_splits(directory: PathLike) -> list[DatasetSplit]:
    return [read_splits_file(p) for p in sorted(Path(directory).glob("*.json"))]


# --- reports -----------------------------------------------------------------------


def _fmt(v) -> Optional[str]:
    return None if v is None else FLOAT_FMT.format(float(v))


class _Raw(str):
    """Marker for preformatted JSON numbers."""


def _report_obj(report: EvalReport) -> dict:
    per_class = {}
    for jc in sorted(report.per_class, key=int):
        c = report.per_class[jc]
        per_class[jc.name] = {
            "ap": _Raw(_fmt(c.ap)) if c.ap is not None else None,
            "tp": c.tp,
            "fp": c.fp,
            "fn": c.fn,
            "precision": [_Raw(_fmt(v)) for v in c.precision],
            "recall": [_Raw(_fmt(v)) for v in c.recall],
        }
    obj = {
        "per_class": per_class,
        "map": _Raw(_fmt(report.map_score)) if report.map_score is not None else None,
        "accuracy": _Raw(_fmt(report.accuracy)) if report.accuracy is not None else None,
        "confusion": [[int(v) for v in row] for row in report.confusion],
        "iou_threshold": _Raw(_fmt(report.iou_threshold)),
        "interpolated": bool(report.interpolated),
        "regression": None,
        "meta": report.meta,
    }
    if report.regression is not None:
        obj["regression"] = {
            k: (_Raw(_fmt(v)) if isinstance(v, float) else v) for k, v in report.regression.items()
        }
    return obj


def _dump(obj, indent: int = 0) -> str:
    """Deterministic JSON with sorted keys; ``_Raw`` values are emitted verbatim."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, _Raw):
        return str(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + f"\n{end}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(_dump(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent + 1) for v in obj) + f"\n{end}]"
    if isinstance(obj, float):
        return FLOAT_FMT.format(obj)
    return json.dumps(obj)


def report_to_json(report: EvalReport) -> str:
    return _dump(_report_obj(report)) + "\n"


def report_to_csv(report: EvalReport) -> str:
    """Long format: ``scope,name,metric,value``; one row per (class, metric) then summary rows."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["scope", "name", "metric", "value"])
    for jc in sorted(report.per_class, key=int):
        c = report.per_class[jc]
        w.writerow(["class", jc.name, "AP", _fmt(c.ap) or ""])
        for m in ("tp", "fp", "fn"):
            w.writerow(["class", jc.name, m.upper(), getattr(c, m)])
    w.writerow(["summary", "all", "mAP", _fmt(report.map_score) or ""])
    w.writerow(["summary", "all", "accuracy", _fmt(report.accuracy) or ""])
    w.writerow(["summary", "all", "iou_threshold", _fmt(report.iou_threshold)])
    if report.regression:
        for k in sorted(report.regression):
            v = report.regression[k]
            w.writerow(["regression", "all", k, _fmt(v) if isinstance(v, float) else v])
    return buf.getvalue()


def write_report(report: EvalReport, path: PathLike, format: str = "json") -> None:
    if format == "json":
        data = report_to_json(report)
    elif format == "csv":
        data = report_to_csv(report)
    else:
        raise ValidationError(f"unknown report format {format!r}")
    try:
        atomic_write(path, data)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def report_from_json(text: str) -> EvalReport:
    try:
        d = json.loads(text)
        per_class = {}
        for name, c in d["per_class"].items():
            per_class[JointClass[name]] = ClassResult(
                ap=c["ap"],
                tp=int(c["tp"]),
                fp=int(c["fp"]),
                fn=int(c["fn"]),
                precision=tuple(float(v) for v in c["precision"]),
                recall=tuple(float(v) for v in c["recall"]),
            )
        reg = d.get("regression")
        return EvalReport(
            per_class=per_class,
            map_score=d["map"],
            accuracy=d["accuracy"],
            confusion=[[int(v) for v in row] for row in d["confusion"]],
            iou_threshold=float(d["iou_threshold"]),
            interpolated=bool(d["interpolated"]),
            regression=reg,
            meta=d.get("meta") or {},
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError, RecursionError) as exc:
        raise ParseError(f"bad report JSON: {type(exc).__name__}: {exc}") from None


def read_report(path: PathLike) -> EvalReport:
    return report_from_json(_read_text(path))


def quantize_report(report: EvalReport) -> EvalReport:
    """The report as it reads back after a JSON round trip (floats at 6 decimals)."""
    return report_from_json(report_to_json(report))
