"""Axis-aligned box arithmetic.

Boxes are corner tuples ``(x1, y1, x2, y2)`` in continuous pixel
coordinates, x rightward, y downward, with ``x1 <= x2`` and ``y1 <= y2``;
width is ``x2 - x1``. Empty boxes (zero width or height) are valid and
have zero area.

The delta parameterization used by the regression branch is the usual
center/log-size form: center shifts normalized by the reference box size,
width and height as log ratios.

Scalar helpers operate on 4-tuples; the ``*_many`` variants operate on
``(n, 4)`` float arrays and are what the anchor and proposal stages call
in bulk.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import GeometryError

BoxLike = Sequence[float]

# exp(20) is ~4.85e8, far beyond any plausible image side; larger log-size
# deltas are treated as numerically invalid rather than silently decoded.
MAX_LOG_SIZE_DELTA = 20.0


def validate_box(b: BoxLike) -> None:
    """Raise GeometryError unless b is a finite, properly ordered box."""
    x1, y1, x2, y2 = b
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        raise GeometryError(f"box has non-finite coordinates: {tuple(b)}")
    if x2 < x1 or y2 < y1:
        raise GeometryError(f"box corners are out of order: {tuple(b)}")


def area(b: BoxLike) -> float:
    """Area of a box; zero for degenerate boxes."""
    x1, y1, x2, y2 = b
    return (x2 - x1) * (y2 - y1)


def iou(a: BoxLike, b: BoxLike) -> float:
    """Intersection over union of two boxes, in [0, 1].

    Returns 0 when the union has zero area (both boxes degenerate).
    """
    ix1 = max(a[0], b[0])
    iy1 = max(a[1], b[1])
    ix2 = min(a[2], b[2])
    iy2 = min(a[3], b[3])
    inter = max(0.0, ix2 - ix1) * max(0.0, iy2 - iy1)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def encode_delta(anchor: BoxLike, target: BoxLike) -> tuple[float, float, float, float]:
    """Encode target relative to anchor as ``(tx, ty, tw, th)``.

    tx, ty are the center offsets divided by the anchor width/height;
    tw, th are log size ratios. Both boxes must have strictly positive
    width and height.
    """
    ax1, ay1, ax2, ay2 = anchor
    tx1, ty1, tx2, ty2 = target
    aw, ah = ax2 - ax1, ay2 - ay1
    tw_, th_ = tx2 - tx1, ty2 - ty1
    if aw <= 0 or ah <= 0:
        raise GeometryError(f"degenerate anchor (zero width or height): {tuple(anchor)}")
    if tw_ <= 0 or th_ <= 0:
        raise GeometryError(f"degenerate target (zero width or height): {tuple(target)}")
    tx = ((tx1 + tx2) - (ax1 + ax2)) / 2.0 / aw
    ty = ((ty1 + ty2) - (ay1 + ay2)) / 2.0 / ah
    return (tx, ty, math.log(tw_ / aw), math.log(th_ / ah))


def decode_delta(anchor: BoxLike, delta: Sequence[float]) -> tuple[float, float, float, float]:
    """Invert :func:`encode_delta`: apply a delta to an anchor.

    Raises GeometryError when the anchor is degenerate or |tw|, |th|
    exceed :data:`MAX_LOG_SIZE_DELTA` (exp overflow guard).
    """
    ax1, ay1, ax2, ay2 = anchor
    tx, ty, tw, th = delta
    aw, ah = ax2 - ax1, ay2 - ay1
    if aw <= 0 or ah <= 0:
        raise GeometryError(f"degenerate anchor (zero width or height): {tuple(anchor)}")
    if abs(tw) > MAX_LOG_SIZE_DELTA or abs(th) > MAX_LOG_SIZE_DELTA:
        raise GeometryError(
            f"log-size delta out of range (|tw|={abs(tw):g}, |th|={abs(th):g}, "
            f"limit {MAX_LOG_SIZE_DELTA:g})"
        )
    cx = (ax1 + ax2) / 2.0 + tx * aw
    cy = (ay1 + ay2) / 2.0 + ty * ah
    w = math.exp(tw) * aw
    h = math.exp(th) * ah
    return (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)


def clip_box(b: BoxLike, width: float, height: float) -> tuple[float, float, float, float]:
    """Clamp box coordinates to the image rectangle [0, width] x [0, height]."""
    if width <= 0 or height <= 0:
        raise GeometryError(f"image dimensions must be positive, got {width}x{height}")
    x1 = min(max(b[0], 0.0), width)
    y1 = min(max(b[1], 0.0), height)
    x2 = min(max(b[2], 0.0), width)
    y2 = min(max(b[3], 0.0), height)
    return (x1, y1, x2, y2)


# ---------------------------------------------------------------------------
# vectorized variants


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two box arrays.

    Args:
        a: (n, 4) boxes.
        b: (m, 4) boxes.

    Returns:
        (n, m) array of IoU values; entries with zero-area union are 0.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0.0, None) * np.clip(iy2 - iy1, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def encode_many(anchors: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Row-wise :func:`encode_delta` over (n, 4) anchor/target arrays."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    tw = targets[:, 2] - targets[:, 0]
    th = targets[:, 3] - targets[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise GeometryError("degenerate anchor in batch encode")
    if np.any(tw <= 0) or np.any(th <= 0):
        raise GeometryError("degenerate target in batch encode")
    dx = ((targets[:, 0] + targets[:, 2]) - (anchors[:, 0] + anchors[:, 2])) / 2.0 / aw
    dy = ((targets[:, 1] + targets[:, 3]) - (anchors[:, 1] + anchors[:, 3])) / 2.0 / ah
    return np.stack([dx, dy, np.log(tw / aw), np.log(th / ah)], axis=1)


def decode_many(anchors: np.ndarray, deltas: np.ndarray,
                clamp: bool = False) -> np.ndarray:
    """Row-wise :func:`decode_delta` over (n, 4) arrays.

    With ``clamp=True`` out-of-range log-size deltas are clipped to the
    overflow limit instead of raising; the proposal stage uses this on raw
    network outputs, which early in training can be arbitrary.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise GeometryError("degenerate anchor in batch decode")
    tw, th = deltas[:, 2], deltas[:, 3]
    if clamp:
        tw = np.clip(tw, -MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA)
        th = np.clip(th, -MAX_LOG_SIZE_DELTA, MAX_LOG_SIZE_DELTA)
    elif np.any(np.abs(tw) > MAX_LOG_SIZE_DELTA) or np.any(np.abs(th) > MAX_LOG_SIZE_DELTA):
        raise GeometryError("log-size delta out of range in batch decode")
    cx = (anchors[:, 0] + anchors[:, 2]) / 2.0 + deltas[:, 0] * aw
    cy = (anchors[:, 1] + anchors[:, 3]) / 2.0 + deltas[:, 1] * ah
    w = np.exp(tw) * aw
    h = np.exp(th) * ah
    return np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)


def clip_many(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """Row-wise :func:`clip_box`."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    out = boxes.copy()
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, width)
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, height)
    return out
