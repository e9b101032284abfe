"""Fixed-length joint-crop sequences with validity masks, and masked pooling.

Binary container layout (little-endian), version 1::

    magic      8 bytes   b"ARTSSEQ1"
    count      uint32    number of sequences
    then per sequence:
      id_len   uint32, id  utf-8 bytes
      L        uint32    sequence length
      crop_h   uint32
      crop_w   uint32
      slots    L x int16 slot code: side * 11 + class index, -1 for padding
      crops    L * crop_h * crop_w float32, row-major (slot, row, col)
      mask     L x uint8 (1 = real joint, 0 = padding)
"""
from __future__ import annotations

import io
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .annot_io import atomic_write
from .core import (
    CANONICAL_SLOTS,
    ArtssError,
    JointDetection,
    ParseError,
    ProtocolError,
    Side,
    ValidationError,
    slot_index,
)
from .imgproc import CanonicalImage, resample

CROP_SIZE = 64
FULL_TAXONOMY = len(CANONICAL_SLOTS)
MAGIC = b"ARTSSEQ1"
PAD_CODE = -1


class AmbiguityError(ArtssError):
    pass


class PoolingError(ArtssError):
    pass


@dataclass(frozen=True)
class JointSequence:
    image_id: str
    crops: np.ndarray  # (L, crop_h, crop_w) float
    validity_mask: np.ndarray  # (L,) uint8
    slot_codes: np.ndarray  # (L,) int16, PAD_CODE for padding

    def __post_init__(self):
        crops = np.asarray(self.crops, dtype=np.float64)
        mask = np.asarray(self.validity_mask, dtype=np.uint8)
        codes = np.asarray(self.slot_codes, dtype=np.int16)
        if crops.ndim != 3 or mask.shape != (crops.shape[0],) or codes.shape != mask.shape:
            raise ValidationError("crops, mask and slot codes disagree on sequence length")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValidationError("validity mask must be binary")
        for a in (crops, mask, codes):
            a.flags.writeable = False
        object.__setattr__(self, "crops", crops)
        object.__setattr__(self, "validity_mask", mask)
        object.__setattr__(self, "slot_codes", codes)

    @property
    def length(self) -> int:
        return self.crops.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.validity_mask.sum())

    def padded_to(self, length: int) -> "JointSequence":
        """Same sequence with extra all-zero, mask-0 slots appended."""
        extra = length - self.length
        if extra < 0:
            raise ProtocolError(f"cannot shrink a length-{self.length} sequence to {length}")
        _, ch, cw = self.crops.shape
        return JointSequence(
            self.image_id,
            np.concatenate([self.crops, np.zeros((extra, ch, cw))]),
            np.concatenate([self.validity_mask, np.zeros(extra, np.uint8)]),
            np.concatenate([self.slot_codes, np.full(extra, PAD_CODE, np.int16)]),
        )


def max_sequence_length(detection_counts: Union[Iterable[int], Mapping[str, Sequence]]) -> int:
    """Largest visible-joint count across patients.

    Accepts per-patient counts or a mapping of patient id to its detections.
    """
    if isinstance(detection_counts, Mapping):
        counts = [len(v) for v in detection_counts.values()]
    else:
        counts = [int(c) for c in detection_counts]
    if not counts:
        raise ProtocolError("cannot size sequences for an empty dataset")
    return max(counts)


def crop_box(img: CanonicalImage, det: JointDetection, size: int = CROP_SIZE) -> np.ndarray:
    """Extract the box region (clamped to the frame) and resample it to ``size x size``."""
    h, w = img.pixels.shape
    x0, y0, x1, y1 = det.box.pixel_corners(w, h)
    c0, r0 = int(np.floor(x0)), int(np.floor(y0))
    c1, r1 = max(int(np.ceil(x1)), c0 + 1), max(int(np.ceil(y1)), r0 + 1)
    c1, r1 = min(c1, w), min(r1, h)
    c0, r0 = min(c0, c1 - 1), min(r0, r1 - 1)
    return np.clip(resample(img.pixels[r0:r1, c0:c1], size, size), 0.0, 1.0)


def _slot_code(det: JointDetection) -> int:
    return slot_index(det.joint, det.side)


def build_sequence(
    images: Union[CanonicalImage, Mapping[Side, CanonicalImage]],
    detections: Sequence[JointDetection],
    max_len: int,
    crop_size: int = CROP_SIZE,
    image_id: str = "",
) -> JointSequence:
    """Crop every detection into its canonical slot and pad to ``max_len``.

    ``images`` is a single frame or one frame per hand side. With
    ``max_len >= 22`` each (side, class) owns a fixed slot; shorter sequences
    keep canonical order but are packed to the front.
    """
    if max_len <= 0:
        raise ProtocolError("sequence length must be positive (no joints in the dataset?)")
    if len(detections) > max_len:
        raise ProtocolError(f"{len(detections)} detections exceed sequence length {max_len}")
    codes = [_slot_code(d) for d in detections]
    dup = [c for c, n in Counter(codes).items() if n > 1]
    if dup:
        names = [f"{CANONICAL_SLOTS[c][0].value}:{CANONICAL_SLOTS[c][1].name}" for c in sorted(dup)]
        raise AmbiguityError(f"duplicate joint detections: {', '.join(names)}")

    def frame_for(d: JointDetection) -> CanonicalImage:
        if isinstance(images, CanonicalImage):
            return images
        try:
            return images[d.side]
        except KeyError:
            raise ValidationError(f"no image for hand side {d.side.value}") from None

    crops = np.zeros((max_len, crop_size, crop_size))
    mask = np.zeros(max_len, np.uint8)
    slots = np.full(max_len, PAD_CODE, np.int16)
    ordered = sorted(zip(codes, detections), key=lambda t: t[0])
    positional = max_len >= FULL_TAXONOMY
    for k, (code, det) in enumerate(ordered):
        pos = code if positional else k
        crops[pos] = crop_box(frame_for(det), det, crop_size)
        mask[pos] = 1
        slots[pos] = code
    if not image_id:
        image_id = detections[0].image_id if detections else ""
    return JointSequence(image_id, crops, mask, slots)


def masked_pool(features: Union[JointSequence, np.ndarray], mask=None, mode: str = "mean") -> np.ndarray:
    """Pool per-slot features over valid slots only.

    ``features`` is a sequence (its crops are flattened per slot) or an
    ``(L, ...)`` array with an explicit ``mask``. Padded slots are never read.
    """
    if isinstance(features, JointSequence):
        mask = features.validity_mask
        feats = features.crops.reshape(features.length, -1)
    else:
        feats = np.asarray(features, dtype=np.float64)
        feats = feats.reshape(feats.shape[0], -1)
        if mask is None:
            raise ValidationError("masked_pool on a raw array needs a mask")
    valid = np.asarray(mask).astype(bool)
    if valid.shape != (feats.shape[0],):
        raise ValidationError("mask length does not match the number of slots")
    if not valid.any():
        raise PoolingError("no valid slots to pool")
    picked = feats[valid]
    if mode == "mean":
        return picked.mean(axis=0)
    if mode == "max":
        return picked.max(axis=0)
    raise ValidationError(f"unknown pooling mode {mode!r}")


# --- binary container ---------------------------------------------------------


def pack_sequences(seqs: Sequence[JointSequence]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(seqs)))
    for s in seqs:
        sid = s.image_id.encode("utf-8")
        L, ch, cw = s.crops.shape
        buf.write(struct.pack("<I", len(sid)))
        buf.write(sid)
        buf.write(struct.pack("<III", L, ch, cw))
        buf.write(s.slot_codes.astype("<i2").tobytes())
        buf.write(s.crops.astype("<f4").tobytes(order="C"))
        buf.write(s.validity_mask.astype(np.uint8).tobytes())
    return buf.getvalue()


def unpack_sequences(data: bytes) -> list[JointSequence]:
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ParseError(f"truncated sequence container at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC))) != MAGIC:
        raise ParseError("not a sequence container (bad magic)")
    (count,) = struct.unpack("<I", take(4))
    out = []
    for _ in range(count):
        (id_len,) = struct.unpack("<I", take(4))
        try:
            sid = bytes(take(id_len)).decode("utf-8")
        except UnicodeDecodeError:
            raise ParseError("sequence id is not UTF-8") from None
        L, ch, cw = struct.unpack("<III", take(12))
        if L * ch * cw * 4 > len(view) - pos:
            raise ParseError(f"sequence {sid!r} claims more data than the file holds")
        codes = np.frombuffer(take(2 * L), dtype="<i2").astype(np.int16)
        raw = np.frombuffer(take(4 * L * ch * cw), dtype="<f4")
        if not np.all(np.isfinite(raw)):
            raise ParseError(f"sequence {sid!r} holds non-finite crop values")
        crops = raw.reshape(L, ch, cw).astype(np.float64)
        mask = np.frombuffer(take(L), dtype=np.uint8).copy()
        try:
            out.append(JointSequence(sid, crops, mask, codes))
        except ValidationError as exc:
            raise ParseError(f"sequence {sid!r}: {exc}") from None
    if pos != len(view):
        raise ParseError(f"{len(view) - pos} trailing bytes after {count} sequences")
    return out


def write_sequences(seqs: Sequence[JointSequence], path) -> None:
    atomic_write(path, pack_sequences(seqs))


def read_sequences(path) -> list[JointSequence]:
    return unpack_sequences(Path(path).read_bytes())
