"""Synthetic hand phantoms with analytically known masks and joint boxes.

Used by the test suite and by ``scripts/make_fixture.py``. Shapes are built
from capsules (line segments with a radius) in normalized coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, JointClass, JointDetection, Side

BACKGROUND = 0.08
TISSUE = 0.62
JOINT_BOX = (0.075, 0.06)

# (base, tip, radius) for a left hand seen palm-down, thumb on the image right.
_FINGERS = {
    "thumb": ((0.64, 0.66), (0.80, 0.44), 0.034),
    "index": ((0.58, 0.50), (0.60, 0.20), 0.028),
    "middle": ((0.50, 0.49), (0.50, 0.15), 0.029),
    "ring": ((0.42, 0.50), (0.40, 0.19), 0.028),
    "little": ((0.345, 0.53), (0.31, 0.28), 0.025),
}
_PALM = ((0.46, 0.58), (0.54, 0.58), 0.14)
_FOREARM = ((0.49, 0.72), (0.49, 1.05), 0.12)


def _lerp(a, b, t):
    return (a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t)


def joint_centers() -> dict[JointClass, tuple[float, float]]:
    f = _FINGERS
    return {
        JointClass.PI: _lerp(*f["thumb"][:2], 0.68),
        JointClass.MCP_0: _lerp(*f["thumb"][:2], 0.30),
        JointClass.PIP_1: _lerp(*f["index"][:2], 0.45),
        JointClass.PIP_2: _lerp(*f["middle"][:2], 0.45),
        JointClass.PIP_3: _lerp(*f["ring"][:2], 0.45),
        JointClass.PIP_4: _lerp(*f["little"][:2], 0.45),
        JointClass.MCP_1: _lerp(*f["index"][:2], 0.02),
        JointClass.MCP_2: _lerp(*f["middle"][:2], 0.02),
        JointClass.MCP_3: _lerp(*f["ring"][:2], 0.02),
        JointClass.MCP_4: _lerp(*f["little"][:2], 0.02),
        JointClass.WRIST: (0.49, 0.76),
    }


def _capsule(xs, ys, a, b, r):
    ax, ay = a
    bx, by = b
    vx, vy = bx - ax, by - ay
    t = ((xs - ax) * vx + (ys - ay) * vy) / (vx * vx + vy * vy)
    t = np.clip(t, 0.0, 1.0)
    dx = xs - (ax + t * vx)
    dy = ys - (ay + t * vy)
    return dx * dx + dy * dy <= r * r


def _transform(pt, scale, shift, mirror):
    x, y = pt
    if mirror:
        x = 1.0 - x
    x = 0.5 + (x - 0.5) * scale + shift[0]
    y = 0.5 + (y - 0.5) * scale + shift[1]
    return x, y


@dataclass
class Phantom:
    pixels: np.ndarray
    mask: np.ndarray
    joints: list = field(default_factory=list)


def render_hand(
    size: int = 256,
    side: Side = Side.LEFT,
    scale: float = 1.0,
    shift: tuple[float, float] = (0.0, 0.0),
    noise: float = 0.03,
    erosion: dict | None = None,
    missing: tuple = (),
    image_id: str = "phantom",
    rng: np.random.Generator | None = None,
) -> Phantom:
    """Render one hand; ``erosion`` maps JointClass -> darkening in [0, 1]."""
    rng = rng if rng is not None else np.random.default_rng(0)
    mirror = side is Side.RIGHT
    ys, xs = (np.indices((size, size), dtype=np.float64) + 0.5) / size

    def cap(spec):
        a, b, r = spec
        return _capsule(
            xs, ys, _transform(a, scale, shift, mirror), _transform(b, scale, shift, mirror), r * scale
        )

    mask = cap(_PALM) | cap(_FOREARM)
    for spec in _FINGERS.values():
        mask |= cap(spec)

    img = np.full((size, size), BACKGROUND)
    img[mask] = TISSUE
    # mild bone-density gradient toward the wrist
    img[mask] += 0.08 * ys[mask]

    erosion = erosion or {}
    joints = []
    bw, bh = JOINT_BOX[0] * scale, JOINT_BOX[1] * scale
    for jc, c in joint_centers().items():
        cx, cy = _transform(c, scale, shift, mirror)
        if jc in missing:
            # a disappeared joint: smear the joint space into soft tissue
            continue
        gap = np.abs(ys - cy) < 0.006 * scale
        near = (np.abs(xs - cx) < bw / 2) & (np.abs(ys - cy) < bh / 2) & mask
        img[near & gap] -= 0.12
        img[near & ~gap] += 0.1
        if jc in erosion:
            img[near] -= 0.25 * float(erosion[jc])
        joints.append(
            JointDetection(image_id, jc, BoundingBox(cx, cy, bw, bh), side=side)
        )

    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    img = np.clip(img, 0.0, 1.0)
    return Phantom(img, mask.astype(np.uint8), joints)


def bar_image(size: int = 64, angle_deg: float = 90.0, length: float = 0.7, width: float = 0.12) -> np.ndarray:
    """Bright bar on a dark field, long axis at ``angle_deg`` (screen CCW)."""
    ys, xs = (np.indices((size, size), dtype=np.float64) + 0.5) / size
    t = np.radians(angle_deg)
    ux, uy = np.cos(t), -np.sin(t)
    dx, dy = xs - 0.5, ys - 0.5
    along = dx * ux + dy * uy
    across = -dx * uy + dy * ux
    bar = (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)
    return np.where(bar, 0.9, 0.0)
