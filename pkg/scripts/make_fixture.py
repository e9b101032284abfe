"""Regenerate the shipped test fixtures.

    python scripts/make_fixture.py [--out tests/fixtures]

Writes
  synthetic12/   12 phantom radiographs, joint labels in the original frame,
                 and a manifest with two-reader scores
  manifest970.csv  970 ids with demographics and reader scores (no images)

Everything is derived from fixed seeds, so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from artss import annot_io
from artss.augment import AugmentParams, transform_box
from artss.core import Gender, JointClass, Side
from artss.imgproc import CanonicalImage, rotate, save_png
from artss.synthetic import render_hand

SIZE = 256

# id, side, rotation applied to the rendered hand, manifest orientation override,
# missing joints, eroded joints -> grade
CASES = [
    ("s01", Side.LEFT, 0, None, (), {}),
    ("s02", Side.RIGHT, 0, None, (), {JointClass.MCP_2: 0.6}),
    ("s03", Side.LEFT, 90, None, (), {JointClass.PIP_1: 1.0, JointClass.WRIST: 0.5}),
    ("s04", Side.RIGHT, 0, None, (JointClass.PIP_4,), {}),
    ("s05", Side.LEFT, 0, None, (), {JointClass.MCP_1: 0.4, JointClass.MCP_3: 0.4}),
    ("s06", Side.RIGHT, -90, 0.0, (), {JointClass.PI: 0.8}),
    ("s07", Side.LEFT, 0, None, (JointClass.PI, JointClass.MCP_4), {JointClass.PIP_2: 0.7}),
    ("s08", Side.RIGHT, 0, None, (), {}),
    ("s09", Side.LEFT, 0, None, (), {JointClass.WRIST: 1.0, JointClass.MCP_0: 1.0}),
    ("s10", Side.RIGHT, 90, None, (JointClass.PIP_3,), {JointClass.MCP_2: 0.3}),
    ("s11", Side.LEFT, 0, None, (), {JointClass.PIP_3: 0.5}),
    ("s12", Side.RIGHT, 0, None, (), {JointClass.MCP_1: 0.9, JointClass.PIP_1: 0.9}),
]


def make_synthetic12(out: Path) -> None:
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    rows = []
    for k, (sid, side, rot, override, missing, erosion) in enumerate(CASES):
        rng = np.random.default_rng(1000 + k)
        ph = render_hand(
            SIZE,
            side,
            scale=float(rng.uniform(0.9, 1.0)),
            shift=(float(rng.uniform(-0.02, 0.02)), float(rng.uniform(-0.02, 0.0))),
            erosion=erosion,
            missing=missing,
            image_id=sid,
            rng=rng,
        )
        pixels = ph.pixels
        joints = ph.joints
        if rot:
            pixels = rotate(CanonicalImage(pixels), rot, mode="nearest").pixels
            params = AugmentParams(rotation=float(rot))
            joints = [replace(j, box=transform_box(j.box, params, SIZE, SIZE)) for j in joints]
        save_png(pixels, out / "images" / f"{sid}.png")
        annot_io.write_boxes(joints, out / "labels" / f"{sid}.txt")
        # damage score: 5 per unit erosion, 3 per missing joint, small reader disagreement
        base = 5.0 * sum(erosion.values()) + 3.0 * len(missing)
        ra = round(base, 1)
        rb = round(base + (0.5 if k % 3 == 0 else 0.0), 1)
        rows.append(
            annot_io.ManifestRow(
                sid,
                str(out / "images" / f"{sid}.png"),
                age=float(40 + 3 * k),
                gender=Gender.FEMALE if k % 4 else Gender.MALE,
                side=side,
                reader_a=ra,
                reader_b=rb,
                orientation_deg=override,
            )
        )
    annot_io.atomic_write(out / "manifest.csv", annot_io.format_manifest(rows, base=out))


def make_manifest970(path: Path) -> None:
    rng = np.random.default_rng(970)
    rows = []
    for k in range(970):
        a = float(np.round(rng.gamma(1.5, 20.0), 0))
        a = min(a, 280.0)
        b = min(max(a + float(rng.integers(-4, 5)), 0.0), 288.0)
        rows.append(
            annot_io.ManifestRow(
                f"P{k:04d}",
                "",
                age=float(np.round(rng.normal(58, 12), 0)),
                gender=Gender.FEMALE if rng.random() < 0.7 else Gender.MALE,
                side=Side.BOTH,
                reader_a=a,
                reader_b=b,
            )
        )
    annot_io.atomic_write(path, annot_io.format_manifest(rows))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    args = ap.parse_args()
    out = Path(args.out)
    make_synthetic12(out / "synthetic12")
    make_manifest970(out / "manifest970.csv")
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
