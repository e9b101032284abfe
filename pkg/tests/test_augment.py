import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artss.augment import (
    AugmentConfig,
    AugmentParams,
    apply_augment,
    augment,
    make_rng,
    sample_params,
    transform_box,
    transform_points,
)
from artss.core import BoundingBox, JointClass, JointDetection, Side, ValidationError
from artss.imgproc import CanonicalImage
from conftest import grid_boxes


def test_defaults_are_published_values():
    cfg = AugmentConfig()
    assert cfg.rotation_range == 10.0
    assert cfg.width_shift_range == 0.2 and cfg.height_shift_range == 0.2
    assert cfg.horizontal_flip is True
    assert cfg.brightness_range == (0.7, 1.2)


def test_draws_within_ranges():
    cfg = AugmentConfig()
    flips = 0
    for k in range(2000):
        p = sample_params(make_rng(0, "img", k), cfg)
        assert -10.0 <= p.rotation <= 10.0
        assert -0.2 <= p.dx <= 0.2 and -0.2 <= p.dy <= 0.2
        assert 0.7 <= p.brightness <= 1.2
        flips += p.flip
    assert 850 < flips < 1150


def test_rng_keyed_and_reproducible():
    a = sample_params(make_rng(3, "x", 0))
    assert a == sample_params(make_rng(3, "x", 0))
    assert a != sample_params(make_rng(3, "x", 1))
    assert a != sample_params(make_rng(3, "y", 0))


@given(grid_boxes())
def test_flip_mirrors_center(box):
    nb = transform_box(box, AugmentParams(flip=True), 64, 64, 0.0)
    assert abs(nb.cx - (1 - box.cx)) <= 1e-12
    assert abs(nb.cy - box.cy) <= 1e-12
    assert abs(nb.w - box.w) <= 1e-12 and abs(nb.h - box.h) <= 1e-12


@given(st.floats(-10, 10), st.floats(-0.2, 0.2), st.floats(-0.2, 0.2), st.booleans())
def test_points_are_rigid(rot, dx, dy, flip):
    # on a square frame the map is an isometry, so pairwise distances survive
    pts = np.array([[0.1, 0.2], [0.7, 0.4], [0.5, 0.9]])
    out = transform_points(pts, AugmentParams(rot, dx, dy, flip), 100, 100)
    d0 = np.linalg.norm(pts[0] - pts[1:], axis=1)
    d1 = np.linalg.norm(out[0] - out[1:], axis=1)
    assert np.allclose(d0, d1, atol=1e-12)


def test_shift_moves_box():
    b = BoundingBox(0.5, 0.5, 0.1, 0.1)
    nb = transform_box(b, AugmentParams(dx=0.2, dy=-0.1), 50, 80)
    assert nb.cx == pytest.approx(0.7) and nb.cy == pytest.approx(0.4)


def test_box_leaving_frame_dropped():
    b = BoundingBox(0.9, 0.5, 0.1, 0.1)
    assert transform_box(b, AugmentParams(dx=0.2), 50, 50) is None


def test_hull_grows_under_rotation():
    b = BoundingBox(0.5, 0.5, 0.2, 0.1)
    nb = transform_box(b, AugmentParams(rotation=10.0), 100, 100)
    assert nb.w > 0.2 and nb.h > 0.1


def _rect_image(box, n=64):
    a = np.zeros((n, n))
    x0, y0, x1, y1 = (np.array(box.corners()) * n).round().astype(int)
    a[y0:y1, x0:x1] = 1.0
    return CanonicalImage(a, side=Side.LEFT)


@pytest.mark.parametrize("params", [AugmentParams(flip=True), AugmentParams(rotation=90.0), AugmentParams(dx=0.125, dy=0.25)])
def test_image_and_box_move_together(params):
    box = BoundingBox.from_corners(8 / 64, 16 / 64, 24 / 64, 40 / 64)
    img = _rect_image(box)
    det = JointDetection("a", JointClass.MCP_1, box, side=Side.LEFT)
    res = apply_augment(img, [det], params)
    ys, xs = np.nonzero(res.image.pixels > 0.5)
    got = BoundingBox.from_corners(xs.min() / 64, ys.min() / 64, (xs.max() + 1) / 64, (ys.max() + 1) / 64)
    nb = res.boxes[0].box
    assert np.allclose(nb.corners(), got.corners(), atol=1e-12)


def test_flip_mirrors_side_tags():
    img = CanonicalImage(np.zeros((32, 32)), side=Side.LEFT)
    det = JointDetection("a", JointClass.PI, BoundingBox(0.3, 0.3, 0.1, 0.1), side=Side.LEFT)
    res = apply_augment(img, [det], AugmentParams(flip=True))
    assert res.image.side is Side.RIGHT and res.boxes[0].side is Side.RIGHT


def test_brightness_clipped():
    img = CanonicalImage(np.full((8, 8), 0.9))
    res = apply_augment(img, [], AugmentParams(brightness=1.2))
    assert np.all(res.image.pixels == 1.0)


def test_all_dropped_flagged():
    img = CanonicalImage(np.zeros((32, 32)))
    det = JointDetection("a", JointClass.PI, BoundingBox(0.95, 0.5, 0.08, 0.08))
    res = apply_augment(img, [det], AugmentParams(dx=0.2))
    assert res.all_dropped and res.dropped == 1 and res.boxes == []


def test_augment_deterministic():
    img = CanonicalImage(np.random.default_rng(0).random((32, 32)))
    a, b = augment(img, [], 5), augment(img, [], 5)
    assert np.array_equal(a.image.pixels, b.image.pixels) and a.params == b.params


def test_config_file(tmp_path):
    p = tmp_path / "aug.json"
    p.write_text(json.dumps({"rotation_range": 5, "brightness_range": [0.9, 1.1]}))
    cfg = AugmentConfig.from_file(p)
    assert cfg.rotation_range == 5 and cfg.brightness_range == (0.9, 1.1)
    assert AugmentConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.to_dict().items()}) == cfg
    p.write_text(json.dumps({"zoom": 1}))
    with pytest.raises(ValidationError):
        AugmentConfig.from_file(p)


def test_bad_config():
    with pytest.raises(ValidationError):
        AugmentConfig(brightness_range=(1.2, 0.7))
