"""Resize, normalize, estimate orientation, and rotate to the canonical pose.

Geometry conventions used throughout the package: array rows are y (pointing
down), columns are x; pixel ``(i, j)`` covers ``[j, j+1) x [i, i+1)`` so its
center sits at ``(j + 0.5, i + 0.5)``. Angles are degrees counter-clockwise
as seen on screen, 0 = horizontal, 90 = vertical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .core import MIN_IMAGE_DIM, ArtssError, ImageRecord, Side, ValidationError

DETECTION_SIZE = (640, 640)
CROP_SIZE = (224, 224)
FOREGROUND_THRESHOLD = 0.1
CANONICAL_ANGLE = 90.0


class EstimationError(ArtssError):
    pass


@dataclass(frozen=True)
class CanonicalImage:
    pixels: np.ndarray
    orientation_applied: float = 0.0
    id: str = ""
    side: Side = Side.BOTH

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2:
            raise ValidationError(f"canonical image must be 2-D, got shape {px.shape}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0 or not np.all(np.isfinite(px))):
            raise ValidationError("canonical image values must lie in [0, 1]")
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def with_pixels(self, pixels: np.ndarray, **changes) -> "CanonicalImage":
        kw = dict(orientation_applied=self.orientation_applied, id=self.id, side=self.side)
        kw.update(changes)
        return CanonicalImage(np.clip(pixels, 0.0, 1.0), **kw)


def to_canonical(img: Union[ImageRecord, CanonicalImage]) -> CanonicalImage:
    if isinstance(img, CanonicalImage):
        return img
    return CanonicalImage(img.pixels.astype(np.float64) / 255.0, id=img.id, side=img.side)


def _sample_axis(n_out: int, n_in: int):
    """Source indices and weights for half-pixel-aligned linear resampling."""
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def resample(pixels: np.ndarray, out_w: int, out_h: int, mode: str = "bilinear") -> np.ndarray:
    """Resize a 2-D float array; no dimension checks."""
    in_h, in_w = pixels.shape
    if (in_w, in_h) == (out_w, out_h):
        return pixels.astype(np.float64, copy=True)
    if mode == "nearest":
        ys = np.minimum(((np.arange(out_h) + 0.5) * in_h / out_h).astype(int), in_h - 1)
        xs = np.minimum(((np.arange(out_w) + 0.5) * in_w / out_w).astype(int), in_w - 1)
        return pixels[np.ix_(ys, xs)].astype(np.float64)
    if mode != "bilinear":
        raise ValidationError(f"unknown interpolation mode {mode!r}")
    y0, y1, fy = _sample_axis(out_h, in_h)
    x0, x1, fx = _sample_axis(out_w, in_w)
    p = pixels.astype(np.float64)
    top = p[y0][:, x0] * (1 - fx) + p[y0][:, x1] * fx
    bot = p[y1][:, x0] * (1 - fx) + p[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def resize(
    img: Union[ImageRecord, CanonicalImage],
    target_w: int = DETECTION_SIZE[0],
    target_h: int = DETECTION_SIZE[1],
    mode: str = "bilinear",
    min_dim: int = MIN_IMAGE_DIM,
) -> CanonicalImage:
    """Resample to ``target_w x target_h`` and rescale intensities by 1/255.

    ``min_dim`` guards against degenerate targets; lower it only for tests.
    """
    if target_w < min_dim or target_h < min_dim:
        raise ValidationError(f"target size {target_w}x{target_h} below minimum {min_dim}")
    canon = to_canonical(img)
    out = resample(canon.pixels, target_w, target_h, mode)
    return canon.with_pixels(out)


def estimate_orientation(img: CanonicalImage, threshold: float = FOREGROUND_THRESHOLD) -> float:
    """Principal-axis angle of the foreground intensity distribution, in [0, 180)."""
    px = np.asarray(img.pixels, dtype=np.float64)
    weights = np.where(px > threshold, px, 0.0)
    total = weights.sum()
    if total <= 0:
        raise EstimationError(f"no pixel above foreground threshold {threshold}")
    ys, xs = np.indices(px.shape, dtype=np.float64)
    # flip y so angles read counter-clockwise on screen
    ys = -ys
    mx = (weights * xs).sum() / total
    my = (weights * ys).sum() / total
    dx, dy = xs - mx, ys - my
    mu20 = (weights * dx * dx).sum() / total
    mu02 = (weights * dy * dy).sum() / total
    mu11 = (weights * dx * dy).sum() / total
    angle = 0.5 * math.degrees(math.atan2(2.0 * mu11, mu20 - mu02))
    angle %= 180.0
    # 180 - tiny can round up to exactly 180
    return 0.0 if angle >= 180.0 else angle


def _rot_terms(angle_deg: float) -> tuple[float, float]:
    """cos/sin snapped to exact values at multiples of 90 degrees."""
    quarter = angle_deg / 90.0
    if abs(quarter - round(quarter)) < 1e-12:
        k = int(round(quarter)) % 4
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[k]
    t = math.radians(angle_deg)
    return math.cos(t), math.sin(t)


def rotation_matrix(angle_deg: float) -> np.ndarray:
    """Forward map for a screen-CCW rotation acting on (x, y-down) offsets."""
    c, s = _rot_terms(angle_deg)
    return np.array([[c, s], [-s, c]])


def warp_affine(
    pixels: np.ndarray,
    matrix: np.ndarray,
    offset: np.ndarray,
    mode: str = "bilinear",
    fill: float = 0.0,
) -> np.ndarray:
    """Apply ``dst = M @ (src - center) + center + offset`` by inverse mapping.

    Coordinates are continuous pixel coordinates with centers at ``+0.5``; the
    output keeps the input's dimensions, uncovered pixels get ``fill``.
    """
    h, w = pixels.shape
    center = np.array([w / 2.0, h / 2.0])
    inv = np.linalg.inv(matrix) if not _is_signed_permutation(matrix) else matrix.T
    ys, xs = np.indices((h, w), dtype=np.float64)
    dst = np.stack([xs + 0.5, ys + 0.5], axis=-1) - center - offset
    src = dst @ inv.T + center - 0.5  # back to index space
    sx, sy = src[..., 0], src[..., 1]
    p = pixels.astype(np.float64)
    if mode == "nearest":
        ix = np.floor(sx + 0.5).astype(int)
        iy = np.floor(sy + 0.5).astype(int)
        ok = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
        out = np.full((h, w), fill, dtype=np.float64)
        out[ok] = p[iy[ok], ix[ok]]
        return out
    if mode != "bilinear":
        raise ValidationError(f"unknown interpolation mode {mode!r}")
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    fx, fy = sx - x0, sy - y0
    padded = np.pad(p, 1, constant_values=fill)

    def tap(yy, xx):
        inside = (xx >= -1) & (xx <= w) & (yy >= -1) & (yy <= h)
        vals = np.full(xx.shape, fill, dtype=np.float64)
        vals[inside] = padded[yy[inside] + 1, xx[inside] + 1]
        return vals

    out = (
        tap(y0, x0) * (1 - fx) * (1 - fy)
        + tap(y0, x0 + 1) * fx * (1 - fy)
        + tap(y0 + 1, x0) * (1 - fx) * fy
        + tap(y0 + 1, x0 + 1) * fx * fy
    )
    return out


def _is_signed_permutation(m: np.ndarray) -> bool:
    return bool(np.all(np.isin(m, (-1.0, 0.0, 1.0))) and np.all(np.abs(m).sum(axis=0) == 1))


def rotate(img: CanonicalImage, angle_deg: float, mode: str = "bilinear") -> CanonicalImage:
    """Rotate content counter-clockwise about the image center, same canvas, fill 0."""
    if angle_deg % 360.0 == 0.0:
        return img.with_pixels(img.pixels)
    out = warp_affine(img.pixels, rotation_matrix(angle_deg), np.zeros(2), mode)
    return img.with_pixels(out, orientation_applied=img.orientation_applied + angle_deg)


def reorient(img: CanonicalImage, current: float, mode: str = "bilinear") -> CanonicalImage:
    """Rotate so that an axis currently at ``current`` degrees becomes vertical."""
    if not (0.0 <= current < 180.0) or not math.isfinite(current):
        raise ValidationError(f"orientation {current} outside [0, 180)")
    delta = CANONICAL_ANGLE - current
    if delta == 0.0:
        return img.with_pixels(img.pixels, orientation_applied=0.0)
    out = warp_affine(img.pixels, rotation_matrix(delta), np.zeros(2), mode)
    return img.with_pixels(out, orientation_applied=delta)


def load_image(path: Union[str, Path], image_id: str = "", side: Side = Side.BOTH, **meta) -> ImageRecord:
    """Read a PNG/JPEG as 8-bit grayscale."""
    path = Path(path)
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.uint8)
    return ImageRecord(image_id or path.stem, arr, side=side, **meta)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def save_png(pixels: np.ndarray, path: Union[str, Path]) -> None:
    """Save a [0, 1] float array (or uint8 array) as an 8-bit grayscale PNG."""
    arr = pixels if pixels.dtype == np.uint8 else to_uint8(pixels)
    Image.fromarray(arr, mode="L").save(path, format="PNG")
