import logging

import pytest
from hypothesis import given, strategies as st

from artss.core import (
    EXTERNAL_TEST,
    BoundingBox,
    ImageRecord,
    JointDetection,
    JointClass,
    ProtocolError,
    SharpScore,
    Side,
    ValidationError,
    average_readers,
    make_kfold_splits,
    make_paper_splits,
    make_splits,
)

IDS970 = [f"P{k:04d}" for k in range(970)]


class TestPaperSplits:
    def test_sizes(self):
        splits = make_paper_splits(IDS970, 0)
        folds = [s for s in splits if s.fold_id != EXTERNAL_TEST]
        assert [len(s.train_ids) for s in folds] == [452, 452, 452]
        assert [len(s.val_ids) for s in folds] == [227, 227, 227]
        assert all(len(s.test_ids) == 291 for s in splits)
        ext = splits[-1]
        assert ext.fold_id == EXTERNAL_TEST and len(ext.train_ids) == 679 and ext.val_ids == ()

    def test_test_set_disjoint_and_shared(self):
        splits = make_paper_splits(IDS970, 4)
        test = set(splits[0].test_ids)
        for s in splits:
            assert set(s.test_ids) == test
            assert not test & (set(s.train_ids) | set(s.val_ids))

    def test_every_pool_id_validated_at_least_once(self):
        splits = make_paper_splits(IDS970, 2)
        seen = set().union(*(s.val_ids for s in splits[:3]))
        assert seen == set(splits[-1].train_ids)

    def test_borrow_is_logged(self, caplog):
        with caplog.at_level(logging.WARNING):
            make_paper_splits(IDS970, 0)
        assert "reuses 2 ids" in caplog.text

    def test_deterministic_and_seeded(self):
        assert make_paper_splits(IDS970, 1) == make_paper_splits(list(reversed(IDS970)), 1)
        assert make_paper_splits(IDS970, 1) != make_paper_splits(IDS970, 2)

    def test_wrong_count(self):
        with pytest.raises(ProtocolError):
            make_paper_splits(IDS970[:-1])
        with pytest.raises(ProtocolError):
            make_paper_splits(IDS970[:-1] + ["P0000"])


@given(st.integers(6, 200), st.integers(0, 10))
def test_kfold_partition(n, seed):
    ids = [f"x{k}" for k in range(n)]
    splits = make_splits(ids, seed)
    test = set(splits[0].test_ids)
    vals = [set(s.val_ids) for s in splits[:3]]
    assert set().union(*vals) | test == set(ids)
    assert sum(len(v) for v in vals) + len(test) == n
    for s in splits[:3]:
        assert set(s.train_ids) | set(s.val_ids) | test == set(ids)


def test_kfold_too_small():
    with pytest.raises(ProtocolError):
        make_kfold_splits(["a", "b"])


class TestRecords:
    def test_reader_average(self):
        assert average_readers(10, 13) == 11.5
        with pytest.raises(ValidationError):
            average_readers(-1, 3)
        with pytest.raises(ValidationError):
            average_readers(289, 3)

    def test_score_consistency(self):
        s = SharpScore.from_readers("a", 4, 6)
        assert s.tss == 5.0
        with pytest.raises(ValidationError):
            SharpScore("a", 7.0, 4, 6)

    def test_box_validation(self):
        with pytest.raises(ValidationError):
            BoundingBox(0.5, 0.5, 0.0, 0.1)
        with pytest.raises(ValidationError):
            BoundingBox(1.2, 0.5, 0.1, 0.1)
        with pytest.raises(ValidationError):
            BoundingBox(0.5, float("inf"), 0.1, 0.1)

    @given(st.floats(0, 0.4), st.floats(0, 0.4), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
    def test_box_corners_roundtrip(self, x0, y0, w, h):
        b = BoundingBox.from_corners(x0, y0, x0 + w, y0 + h)
        c = b.corners()
        assert c[2] - c[0] == pytest.approx(w) and c[3] - c[1] == pytest.approx(h)

    def test_confidence_range(self):
        with pytest.raises(ValidationError):
            JointDetection("a", JointClass.PI, BoundingBox(0.5, 0.5, 0.1, 0.1), confidence=1.5)

    def test_side_mirror(self):
        assert Side.LEFT.mirrored is Side.RIGHT and Side.BOTH.mirrored is Side.BOTH

    def test_image_too_small(self):
        import numpy as np

        with pytest.raises(ValidationError):
            ImageRecord("a", np.zeros((10, 10), np.uint8))
