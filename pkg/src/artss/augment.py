"""Seeded augmentation with boxes carried through the same geometric transform.

Defaults reproduce the published set: rotation up to 10 degrees, width/height
shifts up to 20 %, horizontal flip, brightness in [0.7, 1.2]. Intensities are
expected already rescaled by 1/255.
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BoundingBox, JointDetection, ValidationError
from .imgproc import CanonicalImage, rotation_matrix, warp_affine

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range: float = 10.0
    width_shift_range: float = 0.2
    height_shift_range: float = 0.2
    horizontal_flip: bool = True
    flip_probability: float = 0.5
    brightness_range: tuple = (0.7, 1.2)
    min_visible_fraction: float = 0.25
    interpolation: str = "bilinear"

    def __post_init__(self):
        lo, hi = self.brightness_range
        object.__setattr__(self, "brightness_range", (float(lo), float(hi)))
        if lo > hi or lo < 0:
            raise ValidationError(f"bad brightness range {self.brightness_range}")
        for name in ("rotation_range", "width_shift_range", "height_shift_range"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValidationError("flip_probability must be in [0, 1]")

    @classmethod
    def from_file(cls, path) -> "AugmentConfig":
        d = json.loads(Path(path).read_text())
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown augmentation keys: {sorted(unknown)}")
        if "brightness_range" in d:
            d["brightness_range"] = tuple(d["brightness_range"])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["brightness_range"] = list(self.brightness_range)
        return d


@dataclass(frozen=True)
class AugmentParams:
    rotation: float = 0.0  # degrees, counter-clockwise on screen
    dx: float = 0.0  # fraction of width, positive moves content right
    dy: float = 0.0  # fraction of height, positive moves content down
    flip: bool = False
    brightness: float = 1.0


def sample_params(rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    r = cfg.rotation_range
    return AugmentParams(
        rotation=float(rng.uniform(-r, r)) if r else 0.0,
        dx=float(rng.uniform(-cfg.width_shift_range, cfg.width_shift_range)) if cfg.width_shift_range else 0.0,
        dy=float(rng.uniform(-cfg.height_shift_range, cfg.height_shift_range)) if cfg.height_shift_range else 0.0,
        flip=bool(cfg.horizontal_flip and rng.random() < cfg.flip_probability),
        brightness=float(rng.uniform(*cfg.brightness_range)),
    )


def make_rng(seed: int, *keys) -> np.random.Generator:
    """Generator keyed by an integer seed plus any strings/ints (e.g. image id, copy index)."""
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(words))


def affine_for(params: AugmentParams, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """(matrix, offset) in pixel units: flip, then rotate about the center, then shift."""
    m = rotation_matrix(params.rotation)
    if params.flip:
        m = m @ np.diag([-1.0, 1.0])
    return m, np.array([params.dx * width, params.dy * height])


def transform_points(points: np.ndarray, params: AugmentParams, width: int, height: int) -> np.ndarray:
    """Map normalized (x, y) points through the augmentation geometry."""
    m, t = affine_for(params, width, height)
    scale = np.array([width, height], dtype=np.float64)
    center = scale / 2.0
    px = np.asarray(points, dtype=np.float64) * scale
    return ((px - center) @ m.T + center + t) / scale


def transform_box(
    box: BoundingBox, params: AugmentParams, width: int, height: int, min_visible: float = 0.25
) -> Optional[BoundingBox]:
    """Axis-aligned hull of the transformed corners, clipped to the frame.

    Returns ``None`` when less than ``min_visible`` of the hull stays inside.
    """
    x0, y0, x1, y1 = box.corners()
    pts = transform_points(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]), params, width, height)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    full = (hi[0] - lo[0]) * (hi[1] - lo[1])
    clo, chi = np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)
    cw, ch = chi[0] - clo[0], chi[1] - clo[1]
    if cw <= 0 or ch <= 0 or full <= 0 or (cw * ch) / full < min_visible:
        return None
    return BoundingBox(
        float((clo[0] + chi[0]) / 2), float((clo[1] + chi[1]) / 2), float(min(cw, 1.0)), float(min(ch, 1.0))
    )


@dataclass
class AugmentResult:
    image: CanonicalImage
    boxes: list
    params: AugmentParams
    dropped: int = 0
    all_dropped: bool = False
    notes: list = field(default_factory=list)


def apply_augment(
    img: CanonicalImage,
    boxes: Sequence[JointDetection],
    params: AugmentParams,
    cfg: AugmentConfig = AugmentConfig(),
) -> AugmentResult:
    h, w = img.pixels.shape
    m, t = affine_for(params, w, h)
    if np.array_equal(m, np.eye(2)) and not t.any():
        px = img.pixels.astype(np.float64)
    else:
        px = warp_affine(img.pixels, m, t, cfg.interpolation)
    px = np.clip(px * params.brightness, 0.0, 1.0)
    side = img.side.mirrored if params.flip else img.side
    out_img = img.with_pixels(px, side=side)

    out_boxes, dropped = [], 0
    for d in boxes:
        nb = transform_box(d.box, params, w, h, cfg.min_visible_fraction)
        if nb is None:
            dropped += 1
            continue
        out_boxes.append(replace(d, box=nb, side=d.side.mirrored if params.flip else d.side))
    result = AugmentResult(out_img, out_boxes, params, dropped)
    if boxes and not out_boxes:
        result.all_dropped = True
        result.notes.append("all boxes dropped")
        log.warning("augmentation of %s dropped every box (%s)", img.id or "<image>", params)
    return result


def augment(
    img: CanonicalImage,
    boxes: Sequence[JointDetection],
    seed: int,
    cfg: AugmentConfig = AugmentConfig(),
) -> AugmentResult:
    params = sample_params(make_rng(seed), cfg)
    return apply_augment(img, boxes, params, cfg)
