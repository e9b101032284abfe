import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from artss.core import BoundingBox, JointClass, JointDetection

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURES = Path(__file__).parent / "fixtures"
SYNTH12 = FIXTURES / "synthetic12"
GRID = 64


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def grid_box(x0, y0, x1, y1, n=GRID):
    """Box whose edges sit on an n x n pixel grid."""
    return BoundingBox.from_corners(x0 / n, y0 / n, x1 / n, y1 / n)


@st.composite
def grid_boxes(draw, n=GRID):
    x0 = draw(st.integers(0, n - 1))
    y0 = draw(st.integers(0, n - 1))
    x1 = draw(st.integers(x0 + 1, n))
    y1 = draw(st.integers(y0 + 1, n))
    return grid_box(x0, y0, x1, y1, n)


def random_box(rng, lo=0.02, hi=0.3):
    w, h = rng.uniform(lo, hi, 2)
    cx = rng.uniform(w / 2, 1 - w / 2)
    cy = rng.uniform(h / 2, 1 - h / 2)
    return BoundingBox(cx, cy, w, h)


def jitter(box, rng, scale=0.03):
    d = rng.uniform(-scale, scale, 2)
    return BoundingBox(
        float(np.clip(box.cx + d[0], 0, 1)), float(np.clip(box.cy + d[1], 0, 1)), box.w, box.h
    )


def random_case(rng, max_pred=6, max_gt=4, n_images=2, joint=JointClass.PIP_1):
    """Random predictions/ground truths for one class; predictions near GTs half of the time."""
    gts, preds = [], []
    for k in range(int(rng.integers(0, max_gt + 1))):
        gts.append(JointDetection(f"im{rng.integers(n_images)}", joint, random_box(rng)))
    for k in range(int(rng.integers(0, max_pred + 1))):
        if gts and rng.random() < 0.6:
            g = gts[int(rng.integers(len(gts)))]
            box, im = jitter(g.box, rng), g.image_id
        else:
            box, im = random_box(rng), f"im{rng.integers(n_images)}"
        # coarse confidences make ties common
        conf = float(rng.integers(0, 5)) / 4
        preds.append(JointDetection(im, joint, box, confidence=conf))
    return preds, gts
