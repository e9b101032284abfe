"""Domain types shared across the toolkit: images, joints, boxes, scores, splits."""
from __future__ import annotations

import enum
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

MIN_IMAGE_DIM = 32
# 16 scored joints per hand, erosion 0-5 + JSN 0-4, two hands.
TSS_MAX = 16 * (5 + 4) * 2

PAPER_TOTAL = 970
PAPER_TEST = 291
PAPER_TRAIN = 452
PAPER_VAL = 227
PAPER_FOLDS = 3
EXTERNAL_TEST = "EXTERNAL_TEST"


class ArtssError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(ArtssError, ValueError):
    pass


class ProtocolError(ArtssError):
    pass


class ParseError(ArtssError, ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class SchemaError(ArtssError, ValueError):
    pass


class PairingError(ArtssError, ValueError):
    def __init__(self, message: str, ids: Sequence[str] = ()):
        self.ids = list(ids)
        super().__init__(message)


class StageError(ArtssError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"
    BOTH = "both"

    @property
    def mirrored(self) -> "Side":
        if self is Side.LEFT:
            return Side.RIGHT
        if self is Side.RIGHT:
            return Side.LEFT
        return self

    @property
    def suffix(self) -> str:
        return {"left": "L", "right": "R", "both": "B"}[self.value]


class Gender(str, enum.Enum):
    FEMALE = "female"
    MALE = "male"


class JointClass(enum.IntEnum):
    """Per-hand joint taxonomy; the integer value is the annotation class index."""

    PI = 0
    PIP_1 = 1
    PIP_2 = 2
    PIP_3 = 3
    PIP_4 = 4
    MCP_0 = 5
    MCP_1 = 6
    MCP_2 = 7
    MCP_3 = 8
    MCP_4 = 9
    WRIST = 10


N_CLASSES = len(JointClass)
HAND_SIDES = (Side.LEFT, Side.RIGHT)
# Canonical slot order: left hand PI..WRIST, then right hand.
CANONICAL_SLOTS = tuple((side, jc) for side in HAND_SIDES for jc in JointClass)


def slot_index(joint: JointClass, side: Side) -> int:
    if side not in HAND_SIDES:
        raise ValidationError(f"joint slot needs a single hand side, got {side.value!r}")
    return HAND_SIDES.index(side) * N_CLASSES + int(joint)


@dataclass(frozen=True)
class ImageRecord:
    id: str
    pixels: np.ndarray
    age: Optional[float] = None
    gender: Optional[Gender] = None
    side: Side = Side.BOTH

    def __post_init__(self):
        if not self.id:
            raise ValidationError("image id must be non-empty")
        px = np.asarray(self.pixels)
        if px.ndim != 2:
            raise ValidationError(f"image {self.id}: pixels must be 2-D, got shape {px.shape}")
        if px.shape[0] < MIN_IMAGE_DIM or px.shape[1] < MIN_IMAGE_DIM:
            raise ValidationError(
                f"image {self.id}: {px.shape[1]}x{px.shape[0]} is below the {MIN_IMAGE_DIM}px minimum"
            )
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ValidationError(f"image {self.id}: intensities outside [0, 255]")
            px = px.astype(np.uint8)
        px = px.copy()
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BoundingBox:
    """Normalized center-format box (fractions of image width/height)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not isinstance(v, (int, float, np.floating, np.integer)) or not math.isfinite(v):
                raise ValidationError(f"box field {name} must be a finite number, got {v!r}")
            object.__setattr__(self, name, float(v))
        for name in ("cx", "cy"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"box field {name}={getattr(self, name)} outside [0, 1]")
        for name in ("w", "h"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValidationError(f"box field {name}={getattr(self, name)} outside (0, 1]")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BoundingBox":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def corners(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) in normalized units, not clamped."""
        return (
            self.cx - self.w / 2,
            self.cy - self.h / 2,
            self.cx + self.w / 2,
            self.cy + self.h / 2,
        )

    def clamped_corners(self) -> tuple[float, float, float, float]:
        x0, y0, x1, y1 = self.corners()
        return max(0.0, x0), max(0.0, y0), min(1.0, x1), min(1.0, y1)

    def pixel_corners(self, width: int, height: int) -> tuple[float, float, float, float]:
        x0, y0, x1, y1 = self.clamped_corners()
        return x0 * width, y0 * height, x1 * width, y1 * height

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class JointDetection:
    image_id: str
    joint: JointClass
    box: BoundingBox
    side: Side = Side.LEFT
    confidence: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "joint", JointClass(self.joint))
        object.__setattr__(self, "side", Side(self.side))
        if self.confidence is not None:
            c = float(self.confidence)
            if not (0.0 <= c <= 1.0):
                raise ValidationError(f"confidence {self.confidence} outside [0, 1]")
            object.__setattr__(self, "confidence", c)

    @property
    def is_prediction(self) -> bool:
        return self.confidence is not None


def _check_reader(name: str, value, ceiling: float) -> None:
    if value is None:
        return
    if not isinstance(value, (int, float, np.integer, np.floating)) or not math.isfinite(value):
        raise ValidationError(f"{name} must be a finite number, got {value!r}")
    if value < 0 or value > ceiling:
        raise ValidationError(f"{name}={value} outside [0, {ceiling:g}]")


def average_readers(a, b, ceiling: float = TSS_MAX) -> float:
    """Ground-truth TSS from two independent reader totals."""
    _check_reader("reader_a", a, ceiling)
    _check_reader("reader_b", b, ceiling)
    if a is None or b is None:
        raise ValidationError("average_readers needs both reader scores")
    # Integer totals sum exactly, and halving is exact in binary floating point.
    return (float(a) + float(b)) / 2.0


@dataclass(frozen=True)
class SharpScore:
    image_id: str
    tss: float
    reader_a: Optional[float] = None
    reader_b: Optional[float] = None
    ceiling: float = field(default=TSS_MAX, compare=False, repr=False)

    def __post_init__(self):
        if not self.image_id:
            raise ValidationError("score image_id must be non-empty")
        _check_reader("reader_a", self.reader_a, self.ceiling)
        _check_reader("reader_b", self.reader_b, self.ceiling)
        _check_reader("tss", self.tss, self.ceiling)
        object.__setattr__(self, "tss", float(self.tss))
        if self.reader_a is not None and self.reader_b is not None:
            expected = average_readers(self.reader_a, self.reader_b, self.ceiling)
            if self.tss != expected:
                raise ValidationError(
                    f"{self.image_id}: tss {self.tss} != mean of readers {expected}"
                )

    @classmethod
    def from_readers(cls, image_id: str, a, b, ceiling: float = TSS_MAX) -> "SharpScore":
        return cls(image_id, average_readers(a, b, ceiling), a, b, ceiling)


@dataclass(frozen=True)
class DatasetSplit:
    fold_id: object  # 1, 2, 3 or EXTERNAL_TEST
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        tr, va, te = set(self.train_ids), set(self.val_ids), set(self.test_ids)
        overlap = (tr & va) | (tr & te) | (va & te)
        if overlap:
            raise ProtocolError(f"split {self.fold_id}: ids in more than one set: {sorted(overlap)[:5]}")

    def to_json_dict(self) -> dict:
        return {
            "fold": self.fold_id,
            "train": list(self.train_ids),
            "val": list(self.val_ids),
            "test": list(self.test_ids),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "DatasetSplit":
        return cls(d["fold"], d["train"], d["val"], d["test"])


def _shuffled(ids: Sequence[str], seed: int) -> list[str]:
    out = sorted(ids)
    random.Random(seed).shuffle(out)
    return out


def make_paper_splits(ids: Sequence[str], seed: int = 0) -> list[DatasetSplit]:
    """3-fold CV splits plus the external test split, with the published set sizes.

    679 non-test ids cannot fill three disjoint 227-id validation sets, so fold 3
    borrows two ids from the folds 1-2 validation pool. Returns
    ``[fold1, fold2, fold3, external]``; the external split trains on all 679.
    """
    ids = list(ids)
    if len(ids) != PAPER_TOTAL or len(set(ids)) != PAPER_TOTAL:
        raise ProtocolError(
            f"paper protocol expects {PAPER_TOTAL} unique ids, got {len(ids)} ({len(set(ids))} unique)"
        )
    order = _shuffled(ids, seed)
    test = order[:PAPER_TEST]
    pool = order[PAPER_TEST:]
    chunks = [pool[0:PAPER_VAL], pool[PAPER_VAL : 2 * PAPER_VAL], pool[2 * PAPER_VAL :]]
    short = PAPER_VAL - len(chunks[2])
    rng = random.Random(seed + 1)
    borrowed = rng.sample(chunks[0] + chunks[1], short)
    if borrowed:
        log.warning("fold 3 validation reuses %d ids from folds 1-2: %s", short, borrowed)
    chunks[2] = chunks[2] + borrowed

    splits = []
    for k, val in enumerate(chunks, start=1):
        vs = set(val)
        train = [i for i in pool if i not in vs]
        splits.append(DatasetSplit(k, train, val, test))
    splits.append(DatasetSplit(EXTERNAL_TEST, pool, (), test))
    return splits


def make_kfold_splits(
    ids: Sequence[str], seed: int = 0, folds: int = PAPER_FOLDS, test_fraction: float = PAPER_TEST / PAPER_TOTAL
) -> list[DatasetSplit]:
    """Generic seeded k-fold CV + held-out test, for datasets other than the 970-image one."""
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate ids in manifest")
    n_test = int(round(len(ids) * test_fraction))
    if len(ids) - n_test < folds:
        raise ProtocolError(f"need at least {folds} non-test ids, got {len(ids) - n_test}")
    order = _shuffled(ids, seed)
    test, pool = order[:n_test], order[n_test:]
    chunks = [pool[k::folds] for k in range(folds)]
    splits = []
    for k, val in enumerate(chunks, start=1):
        vs = set(val)
        splits.append(DatasetSplit(k, [i for i in pool if i not in vs], val, test))
    splits.append(DatasetSplit(EXTERNAL_TEST, pool, (), test))
    return splits


def make_splits(ids: Sequence[str], seed: int = 0) -> list[DatasetSplit]:
    """Paper protocol when the id count matches it, generic k-fold otherwise."""
    if len(ids) == PAPER_TOTAL:
        return make_paper_splits(ids, seed)
    return make_kfold_splits(ids, seed)
