"""Classical hand-mask generation: smooth, wavelet-denoise, threshold, refine."""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import asdict, dataclass
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from .core import ArtssError, ImageRecord, StageError, ValidationError
from .imgproc import CanonicalImage, to_canonical

# Normal-distribution MAD scale: median(|N(0,1)|).
MAD_SCALE = 0.6745
HIST_BINS = 256


class ThresholdError(ArtssError):
    pass


class RefinementError(ArtssError):
    pass


@dataclass(frozen=True)
class MaskParams:
    sigma: Optional[float] = None  # None -> 1.5 px per 640 px of width
    wavelet_levels: int = 2
    disk_radius: int = 2
    max_refine_passes: int = 8
    min_coverage: float = 0.5

    def resolved_sigma(self, width: int) -> float:
        return self.sigma if self.sigma is not None else 1.5 * width / 640.0

    def as_dict(self, width: Optional[int] = None) -> dict:
        d = asdict(self)
        if width is not None:
            d["sigma"] = self.resolved_sigma(width)
        return d


# --- Gaussian smoothing --------------------------------------------------


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ``ceil(3 sigma)``."""
    if not sigma > 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(a: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    r = len(k) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    # edge-inclusive mirror (d c b a | a b c d)
    padded = np.pad(a, pad, mode="symmetric")
    out = np.zeros_like(a, dtype=np.float64)
    n = a.shape[axis]
    for i, w in enumerate(k):
        sl = [slice(None), slice(None)]
        sl[axis] = slice(i, i + n)
        out += w * padded[tuple(sl)]
    return out


def gaussian_smooth(img: CanonicalImage, sigma: float) -> CanonicalImage:
    k = gaussian_kernel(sigma)
    out = _convolve_axis(_convolve_axis(img.pixels, k, 0), k, 1)
    return img.with_pixels(out)


# --- Haar wavelet shrinkage ----------------------------------------------


def haar_forward(a: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """One orthonormal 2-D Haar level: approximation and (horizontal, vertical, diagonal) details."""
    p, q = a[0::2, 0::2], a[0::2, 1::2]
    r, s = a[1::2, 0::2], a[1::2, 1::2]
    ll = (p + q + r + s) / 2.0
    lh = (p - q + r - s) / 2.0
    hl = (p + q - r - s) / 2.0
    hh = (p - q - r + s) / 2.0
    return ll, (lh, hl, hh)


def haar_inverse(ll: np.ndarray, details: tuple[np.ndarray, np.ndarray, np.ndarray]) -> np.ndarray:
    lh, hl, hh = details
    out = np.empty((ll.shape[0] * 2, ll.shape[1] * 2), dtype=np.float64)
    out[0::2, 0::2] = (ll + lh + hl + hh) / 2.0
    out[0::2, 1::2] = (ll - lh + hl - hh) / 2.0
    out[1::2, 0::2] = (ll + lh - hl - hh) / 2.0
    out[1::2, 1::2] = (ll - lh - hl + hh) / 2.0
    return out


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def wavelet_denoise(img: CanonicalImage, levels: int = 2) -> CanonicalImage:
    """Haar shrinkage with the universal threshold ``sigma_hat * sqrt(2 ln N)``.

    The noise level comes from the median absolute finest-scale diagonal
    coefficient. Dimensions that are not multiples of ``2**levels`` are
    mirror-padded and cropped back.
    """
    h, w = img.pixels.shape
    max_levels = int(math.floor(math.log2(min(h, w)))) if min(h, w) > 0 else 0
    if levels < 1 or levels > max_levels:
        raise ValidationError(f"wavelet levels must be in [1, {max_levels}], got {levels}")
    block = 2**levels
    ph, pw = (-h) % block, (-w) % block
    a = np.pad(img.pixels, ((0, ph), (0, pw)), mode="symmetric")

    details = []
    approx = a
    for _ in range(levels):
        approx, d = haar_forward(approx)
        details.append(d)

    sigma_hat = float(np.median(np.abs(details[0][2]))) / MAD_SCALE
    tau = sigma_hat * math.sqrt(2.0 * math.log(a.size))
    if tau > 0:
        details = [tuple(soft_threshold(c, tau) for c in d) for d in details]

    for d in reversed(details):
        approx = haar_inverse(approx, d)
    return img.with_pixels(approx[:h, :w])


# --- Otsu threshold --------------------------------------------------------


def to_bins(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(np.asarray(pixels) * (HIST_BINS - 1) + 0.5), 0, HIST_BINS - 1).astype(np.int64)


def otsu_bin(hist: np.ndarray) -> int:
    """Bin ``t`` maximizing between-class variance of ``{< t}`` vs ``{>= t}``.

    Ties go to the smallest ``t``. Raises when fewer than two bins are occupied.
    """
    hist = np.asarray(hist, dtype=np.float64)
    if np.count_nonzero(hist) < 2:
        raise ThresholdError("Otsu needs at least two distinct intensity levels")
    levels = np.arange(len(hist), dtype=np.float64)
    total = hist.sum()
    mu_total = (hist * levels).sum()
    # class 0 is every bin strictly below the candidate t
    w0 = np.concatenate(([0.0], np.cumsum(hist)[:-1]))
    m0 = np.concatenate(([0.0], np.cumsum(hist * levels)[:-1]))
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_total * w0 - m0 * total) ** 2 / (w0 * w1)
    between[(w0 == 0) | (w1 == 0)] = -1.0
    best = between.max()
    near = np.flatnonzero(between >= best * (1.0 - 1e-9))
    if near.size == 1 or not np.all(hist == np.round(hist)):
        return int(near[0])
    # float rounding can split exact ties; settle near-maximal candidates with integers
    h = [int(v) for v in hist]
    n, mt = int(total), sum(i * v for i, v in enumerate(h))
    return min(near, key=lambda t: _neg_score(h, int(t), n, mt))


def _neg_score(h: list, t: int, n: int, mt: int) -> Fraction:
    w0 = sum(h[:t])
    m0 = sum(i * v for i, v in enumerate(h[:t]))
    return -Fraction((mt * w0 - m0 * n) ** 2, w0 * (n - w0))


def otsu_threshold(img: CanonicalImage) -> float:
    hist = np.bincount(to_bins(img.pixels).ravel(), minlength=HIST_BINS)
    return otsu_bin(hist) / (HIST_BINS - 1)


def threshold(img: CanonicalImage) -> np.ndarray:
    """Binary uint8 mask of pixels at or above the Otsu level."""
    bins = to_bins(img.pixels)
    t = otsu_bin(np.bincount(bins.ravel(), minlength=HIST_BINS))
    return (bins >= t).astype(np.uint8)


# --- Morphological refinement -------------------------------------------------


FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    return (x * x + y * y <= r * r).astype(bool)


def check_binary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {m.shape}")
    if m.dtype != bool and not np.all((m == 0) | (m == 1)):
        raise ValidationError("mask values must be 0 or 1")
    return m.astype(bool)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 4-connected component; ties go to the first in raster order."""
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def _refine_pass(m: np.ndarray, se: np.ndarray, r: int) -> np.ndarray:
    # zero margin keeps opening/closing from reading past the frame
    pad = 2 * r + 1
    p = np.pad(m, pad)
    p = ndimage.binary_opening(p, structure=se)
    if not p.any():
        raise RefinementError("mask is empty after opening; no hand region found")
    p = ndimage.binary_closing(p, structure=se)
    p = p[pad:-pad, pad:-pad]
    p = largest_component(p)
    return ndimage.binary_fill_holes(p, structure=FOUR_CONNECTED)


def refine(mask: np.ndarray, radius: int = 2, max_passes: int = 8, min_coverage: float = 0.5) -> np.ndarray:
    """Open, close, keep the largest component, fill holes; repeated to a fixed point.

    A single pass is not always idempotent (component selection and hole filling
    can expose new thin structures), so passes repeat until the mask stops
    changing. If the surviving component keeps less than ``min_coverage`` of
    the input foreground, the input was fragmented (noise, not a hand) and
    :class:`RefinementError` is raised.
    """
    m = check_binary(mask)
    if radius < 0:
        raise ValidationError(f"disk radius must be >= 0, got {radius}")
    se = disk(radius)
    cur = _refine_pass(m, se, radius)
    for _ in range(max_passes - 1):
        nxt = _refine_pass(cur, se, radius)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
    kept = np.count_nonzero(cur & m) / np.count_nonzero(m)
    if kept < min_coverage:
        raise RefinementError(
            f"largest region keeps {kept:.1%} of the thresholded foreground "
            f"(< {min_coverage:.0%}); no dominant hand region"
        )
    return cur.astype(np.uint8)


# --- Full pipeline ----------------------------------------------------------


def generate_mask(
    img: Union[ImageRecord, CanonicalImage], params: MaskParams = MaskParams()
) -> np.ndarray:
    """smooth -> denoise -> threshold -> refine; errors carry the failing stage name."""
    canon = to_canonical(img)
    stages = (
        ("smooth", lambda x: gaussian_smooth(x, params.resolved_sigma(canon.width))),
        ("denoise", lambda x: wavelet_denoise(x, params.wavelet_levels)),
        ("threshold", threshold),
        ("refine", lambda x: refine(x, params.disk_radius, params.max_refine_passes, params.min_coverage)),
    )
    cur = canon
    for name, fn in stages:
        try:
            cur = fn(cur)
        except ArtssError as exc:
            raise StageError(name, exc) from exc
    return cur
