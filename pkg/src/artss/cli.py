"""``artss`` command line: one subcommand per pipeline stage.

Exit code 0 on success; failures print a JSON object to stderr
(``{"error": ..., "stage": ..., "message": ...}``) and exit 1, usage errors exit 2.
A ``--config`` JSON file supplies defaults (top-level keys for global flags,
a nested object per subcommand); explicit flags win.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import annot_io, baseline, pipeline
from .augment import AugmentConfig
from .core import ArtssError, SharpScore, StageError, ValidationError, make_splits
from .maskgen import MaskParams
from .plots import distribution_svg
from .seqbuild import read_sequences, write_sequences

log = logging.getLogger("artss")

ENV_OUT = "ARTSS_OUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None


def _default_out(sub: str) -> Optional[str]:
    base = os.environ.get(ENV_OUT)
    return str(Path(base) / sub) if base else None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="artss", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON file with default option values")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-image stages")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-level", default="WARNING")
    # global flags are also accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    _add = sub.add_parser
    sub.add_parser = lambda *a, **k: _add(*a, parents=[common], **k)  # type: ignore[method-assign]

    s = sub.add_parser("preprocess", help="resize, normalize and reorient images")
    s.add_argument("--manifest")
    s.add_argument("--out", default=_default_out("canonical"))
    s.add_argument("--target-size", type=_size, default=(640, 640))
    s.add_argument("--labels", help="annotation dir to carry through the reorientation")

    s = sub.add_parser("mask", help="classical hand-mask generation")
    s.add_argument("--in", dest="in_dir")
    s.add_argument("--out", default=_default_out("masks"))
    s.add_argument("--sigma", type=float, default=None)
    s.add_argument("--wavelet-levels", type=int, default=2)
    s.add_argument("--disk", type=int, default=2)
    s.add_argument("--allow-failures", action="store_true", help="exit 0 even if some images yield no mask")

    s = sub.add_parser("eval-seg", help="IoU of predicted vs ground-truth masks")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--out", help="report JSON path (stdout if omitted)")

    s = sub.add_parser("eval-det", help="AP/mAP/accuracy for joint detections")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--out", default=_default_out("eval-det"))
    s.add_argument("--iou-thresh", type=float, default=0.5)
    s.add_argument("--interp-ap", action="store_true", help="all-point interpolated AP instead of precision-at-TP")
    s.add_argument("--default-confidence", type=float, default=None,
                   help="confidence for prediction lines that have none")

    s = sub.add_parser("build-seq", help="padded joint-crop sequences")
    s.add_argument("--det")
    s.add_argument("--img")
    s.add_argument("--out")
    s.add_argument("--crop-size", type=int, default=64)
    s.add_argument("--max-len", type=int, default=None)
    s.add_argument("--masks", help="optional mask dir; crops are taken from masked images")

    s = sub.add_parser("augment", help="seeded augmentation of images + boxes")
    s.add_argument("--in", dest="in_dir")
    s.add_argument("--out", default=_default_out("augment"))
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--aug-config", help="JSON augmentation parameters")

    s = sub.add_parser("split", help="3-fold CV + external test splits")
    s.add_argument("--manifest")
    s.add_argument("--out", default=_default_out("splits"))

    s = sub.add_parser("eval-tss", help="MAE/RMSE/Huber for TSS predictions")
    s.add_argument("--pred")
    s.add_argument("--gt")
    s.add_argument("--huber-delta", type=float, default=1.0)
    s.add_argument("--folds", help="split dir; predictions are grouped by these folds")
    s.add_argument("--model", default="")
    s.add_argument("--out", help="output path prefix (writes .csv and .json); stdout if omitted")

    s = sub.add_parser("baseline-fit", help="fit the ridge baseline")
    s.add_argument("--seq")
    s.add_argument("--scores")
    s.add_argument("--out")
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--split", help="split JSON; train on its train ids only")

    s = sub.add_parser("baseline-predict", help="predict TSS with a fitted baseline")
    s.add_argument("--seq")
    s.add_argument("--model")
    s.add_argument("--out")

    s = sub.add_parser("report-dist", help="age / TSS distribution plot by gender")
    s.add_argument("--manifest")
    s.add_argument("--out")

    s = sub.add_parser("run-all", help="full pipeline with the baseline predictor")
    s.add_argument("--manifest")
    s.add_argument("--out", default=_default_out("run"))
    s.add_argument("--labels", help="annotation dir (default: <manifest dir>/labels)")
    s.add_argument("--target-size", type=_size, default=(640, 640))
    s.add_argument("--crop-size", type=int, default=64)
    s.add_argument("--lambda", dest="lam", type=float, default=1.0)
    s.add_argument("--huber-delta", type=float, default=1.0)
    return p


REQUIRED = {
    "preprocess": ("manifest", "out"),
    "mask": ("in_dir", "out"),
    "eval-seg": ("pred", "gt"),
    "eval-det": ("pred", "gt", "out"),
    "build-seq": ("det", "img", "out"),
    "augment": ("in_dir", "out"),
    "split": ("manifest", "out"),
    "eval-tss": ("pred", "gt"),
    "baseline-fit": ("seq", "scores", "out"),
    "baseline-predict": ("seq", "model", "out"),
    "report-dist": ("manifest", "out"),
    "run-all": ("manifest", "out"),
}


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    glob = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    parser.set_defaults(**glob)
    for name, sp in subs.choices.items():
        section = cfg.get(name, {})
        if isinstance(section, dict):
            vals = {k.replace("-", "_"): v for k, v in section.items()}
            if "target_size" in vals and isinstance(vals["target_size"], str):
                vals["target_size"] = _size(vals["target_size"])
            sp.set_defaults(**vals)


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        annot_io.atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _cmd_preprocess(a):
    rows = annot_io.parse_manifest(a.manifest)
    pipeline.preprocess(rows, a.out, a.target_size, a.labels, a.jobs)


def _cmd_mask(a):
    params = MaskParams(sigma=a.sigma, wavelet_levels=a.wavelet_levels, disk_radius=a.disk)
    infos = pipeline.make_masks(a.in_dir, a.out, params, a.jobs)
    failed = [i for i in infos if i["status"] != "ok"]
    if failed and not a.allow_failures:
        raise StageError("mask", ArtssError(
            f"{len(failed)} of {len(infos)} images produced no mask: "
            + ", ".join(f"{i['id']} ({i['stage']})" for i in failed[:10])
        ))


def _cmd_eval_seg(a):
    res = pipeline.eval_segmentation(a.pred, a.gt)
    _emit(json.dumps(res, sort_keys=True, indent=2) + "\n", a.out)


def _cmd_eval_det(a):
    rep = pipeline.eval_detection(a.pred, a.gt, a.out, a.iou_thresh, a.interp_ap, a.default_confidence)
    acc = "n/a" if rep.accuracy is None else f"{rep.accuracy:.6f}"
    mp = "n/a" if rep.map_score is None else f"{rep.map_score:.6f}"
    print(f"mAP {mp}  accuracy {acc}")


def _cmd_build_seq(a):
    seqs = pipeline.build_sequences(a.det, a.img, a.crop_size, a.max_len, masks_dir=a.masks)
    write_sequences(seqs, a.out)


def _cmd_augment(a):
    cfg = AugmentConfig.from_file(a.aug_config) if a.aug_config else AugmentConfig()
    pipeline.augment_dir(a.in_dir, a.out, a.seed, a.count, cfg, a.jobs)


def _cmd_split(a):
    rows = annot_io.parse_manifest(a.manifest)
    splits = make_splits([r.id for r in rows], a.seed)
    annot_io.write_splits(splits, a.out)


def _cmd_eval_tss(a):
    rows, extra = pipeline.eval_tss(a.pred, a.gt, a.huber_delta, a.folds, a.model)
    csv_text = pipeline.tss_table_csv(rows)
    if a.out:
        annot_io.atomic_write(f"{a.out}.csv", csv_text)
        annot_io.atomic_write(f"{a.out}.json", pipeline.tss_table_json(rows, extra))
    else:
        sys.stdout.write(csv_text)


def _cmd_baseline_fit(a):
    seqs = read_sequences(a.seq)
    if a.split:
        split = annot_io.read_splits_file(a.split)
        keep = {annot_io.split_side_suffix(i)[0] for i in split.train_ids}
        seqs = [s for s in seqs if s.image_id in keep]
    y_map = pipeline.patient_scores(annot_io.parse_scores(a.scores))
    missing = [s.image_id for s in seqs if s.image_id not in y_map]
    if missing:
        raise ValidationError(f"no score for sequences: {', '.join(missing[:10])}")
    ids, X = pipeline.features_for(seqs)
    model = baseline.fit(X, np.array([y_map[i] for i in ids]), a.lam)
    model.save(a.out)


def _cmd_baseline_predict(a):
    seqs = read_sequences(a.seq)
    model = baseline.RidgeModel.load(a.model)
    ids, X = pipeline.features_for(seqs)
    preds = baseline.predict(model, X) if len(ids) else []
    annot_io.write_scores([SharpScore(i, float(v)) for i, v in zip(ids, preds)], a.out)


def _cmd_report_dist(a):
    rows = annot_io.parse_manifest(a.manifest)
    ages, tss = {}, {}
    for r in rows:
        g = r.gender.value if r.gender else "unknown"
        if r.age is not None:
            ages.setdefault(g, []).append(r.age)
        if r.score is not None:
            tss.setdefault(g, []).append(r.score.tss)
    annot_io.atomic_write(a.out, distribution_svg(dict(sorted(ages.items())), dict(sorted(tss.items()))))


def _cmd_run_all(a):
    summary = pipeline.run_all(a.manifest, a.out, a.seed, a.labels, a.target_size, a.crop_size,
                               a.lam, a.huber_delta, jobs=a.jobs)
    print(json.dumps(summary, sort_keys=True))


COMMANDS = {
    "preprocess": _cmd_preprocess,
    "mask": _cmd_mask,
    "eval-seg": _cmd_eval_seg,
    "eval-det": _cmd_eval_det,
    "build-seq": _cmd_build_seq,
    "augment": _cmd_augment,
    "split": _cmd_split,
    "eval-tss": _cmd_eval_tss,
    "baseline-fit": _cmd_baseline_fit,
    "baseline-predict": _cmd_baseline_predict,
    "report-dist": _cmd_report_dist,
    "run-all": _cmd_run_all,
}


def _fail(kind: str, stage: Optional[str], message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "stage": stage, "message": message}, sort_keys=True) + "\n")
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("artss: a subcommand is required")
        missing = [k for k in REQUIRED[args.command] if getattr(args, k, None) in (None, "")]
        if missing:
            raise UsageError(f"artss {args.command}: missing required option(s): "
                             + ", ".join("--" + m.replace("_dir", "").replace("_", "-") for m in missing))
    except UsageError as exc:
        return _fail("UsageError", None, str(exc), 2)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        return _fail(type(exc.cause).__name__, exc.stage, str(exc.cause), 1)
    except (ArtssError, OSError, ValueError) as exc:
        return _fail(type(exc).__name__, args.command, str(exc), 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
