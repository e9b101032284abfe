import numpy as np
import pytest
from hypothesis import given, strategies as st

from artss.core import (
    CANONICAL_SLOTS,
    BoundingBox,
    JointClass,
    JointDetection,
    ParseError,
    ProtocolError,
    Side,
    ValidationError,
    slot_index,
)
from artss.imgproc import CanonicalImage
from artss.seqbuild import (
    PAD_CODE,
    AmbiguityError,
    JointSequence,
    PoolingError,
    build_sequence,
    crop_box,
    masked_pool,
    max_sequence_length,
    pack_sequences,
    read_sequences,
    unpack_sequences,
    write_sequences,
)


def random_sequence(rng, max_len=22, crop=6):
    n = int(rng.integers(1, max_len + 1))
    codes = np.sort(rng.choice(22, n, replace=False)).astype(np.int16)
    L = max_len
    crops = np.zeros((L, crop, crop))
    crops[:n] = rng.random((n, crop, crop))
    mask = np.zeros(L, np.uint8)
    mask[:n] = 1
    slots = np.full(L, PAD_CODE, np.int16)
    slots[:n] = codes
    return JointSequence(f"p{rng.integers(1000)}", crops, mask, slots)


def dets_for(codes, image_id="p"):
    out = []
    for c in codes:
        side, jc = CANONICAL_SLOTS[c]
        out.append(JointDetection(image_id, jc, BoundingBox(0.05 + 0.04 * jc, 0.5, 0.04, 0.04), side=side))
    return out


def test_slot_layout():
    assert len(CANONICAL_SLOTS) == 22
    assert slot_index(JointClass.PI, Side.LEFT) == 0
    assert slot_index(JointClass.WRIST, Side.RIGHT) == 21


def test_max_length():
    assert max_sequence_length([3, 11, 7]) == 11
    assert max_sequence_length({"a": [1, 2], "b": [1]}) == 2
    with pytest.raises(ProtocolError):
        max_sequence_length([])


def test_positional_when_full_taxonomy(rng):
    img = CanonicalImage(rng.random((64, 64)))
    dets = dets_for([3, 15, 0])
    seq = build_sequence({Side.LEFT: img, Side.RIGHT: img}, dets, 22, crop_size=8)
    assert seq.validity_mask.nonzero()[0].tolist() == [0, 3, 15]
    assert seq.slot_codes[3] == 3 and seq.slot_codes[1] == PAD_CODE


def test_packed_when_short(rng):
    img = CanonicalImage(rng.random((64, 64)))
    seq = build_sequence(img, dets_for([7, 2]), 4, crop_size=8)
    assert seq.validity_mask.tolist() == [1, 1, 0, 0]
    assert seq.slot_codes.tolist() == [2, 7, PAD_CODE, PAD_CODE]
    assert np.all(seq.crops[2:] == 0)


def test_duplicate_joint_is_ambiguous(rng):
    img = CanonicalImage(rng.random((64, 64)))
    with pytest.raises(AmbiguityError):
        build_sequence(img, dets_for([4, 4]), 22)


def test_too_many_detections(rng):
    with pytest.raises(ProtocolError):
        build_sequence(CanonicalImage(rng.random((32, 32))), dets_for([1, 2, 3]), 2)


def test_missing_side_image(rng):
    img = CanonicalImage(rng.random((32, 32)))
    with pytest.raises(ValidationError):
        build_sequence({Side.LEFT: img}, dets_for([12]), 22)


def test_crop_content():
    a = np.zeros((40, 40))
    a[10:20, 20:30] = 1.0
    d = JointDetection("p", JointClass.PI, BoundingBox.from_corners(0.5, 0.25, 0.75, 0.5))
    assert np.all(crop_box(CanonicalImage(a), d, 5) == 1.0)


def test_mask_sum_is_detection_count(rng):
    img = CanonicalImage(rng.random((48, 48)))
    for _ in range(30):
        n = int(rng.integers(0, 23))
        codes = sorted(rng.choice(22, n, replace=False))
        L = int(rng.integers(max(n, 1), 30))
        seq = build_sequence({Side.LEFT: img, Side.RIGHT: img}, dets_for(codes), L, crop_size=4)
        assert seq.n_valid == n


def test_padding_invariance(rng):
    for _ in range(50):
        seq = random_sequence(rng)
        for mode in ("mean", "max"):
            base = masked_pool(seq, mode=mode)
            longer = seq.padded_to(seq.length + int(rng.integers(1, 20)))
            assert np.max(np.abs(masked_pool(longer, mode=mode) - base)) <= 1e-12


def test_padded_slots_never_read():
    seq = JointSequence("p", np.stack([np.ones((2, 2)), np.full((2, 2), 1.0)]), [1, 0], [0, PAD_CODE])
    poisoned = JointSequence("p", np.stack([np.ones((2, 2)), np.full((2, 2), 1.0e9)]), [1, 0], [0, PAD_CODE])
    assert np.array_equal(masked_pool(seq), masked_pool(poisoned))


def test_pool_empty_raises():
    seq = JointSequence("p", np.zeros((3, 2, 2)), [0, 0, 0], [PAD_CODE] * 3)
    with pytest.raises(PoolingError):
        masked_pool(seq)


def test_pool_array_needs_mask():
    with pytest.raises(ValidationError):
        masked_pool(np.zeros((3, 4)))


def test_cannot_shrink(rng):
    with pytest.raises(ProtocolError):
        random_sequence(rng).padded_to(3)


class TestContainer:
    def test_roundtrip(self, tmp_path, rng):
        seqs = [random_sequence(rng) for _ in range(5)]
        path = tmp_path / "s.bin"
        write_sequences(seqs, path)
        back = read_sequences(path)
        for a, b in zip(seqs, back):
            assert a.image_id == b.image_id
            assert np.array_equal(a.crops.astype(np.float32), b.crops)
            assert np.array_equal(a.validity_mask, b.validity_mask)
            assert np.array_equal(a.slot_codes, b.slot_codes)

    def test_float32_values_exact(self, rng):
        s = random_sequence(rng)
        s32 = JointSequence(s.image_id, s.crops.astype(np.float32), s.validity_mask, s.slot_codes)
        b = unpack_sequences(pack_sequences([s32]))[0]
        assert np.array_equal(b.crops, s32.crops)
        assert pack_sequences([b]) == pack_sequences([s32])

    def test_bad_magic(self):
        with pytest.raises(ParseError):
            unpack_sequences(b"NOTMAGIC\x00\x00\x00\x00")

    def test_truncated(self, rng):
        data = pack_sequences([random_sequence(rng)])
        for cut in (5, 12, 20, len(data) - 1):
            with pytest.raises(ParseError):
                unpack_sequences(data[:cut])

    def test_trailing_bytes(self, rng):
        with pytest.raises(ParseError):
            unpack_sequences(pack_sequences([random_sequence(rng)]) + b"\x00")

    @given(st.binary(max_size=200))
    def test_random_bytes_never_crash(self, data):
        try:
            unpack_sequences(b"ARTSSEQ1" + data)
        except ParseError:
            pass
