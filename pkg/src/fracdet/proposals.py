"""From raw per-anchor scores to a ranked, deduplicated box set.

Greedy non-maximum suppression plus the two filtering pipelines built on
it: proposal selection after the sliding head, and per-class detection
finalization after the region head.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import geometry
from .errors import ConfigError

# decoded boxes thinner than this (in pixels) are dropped as degenerate
MIN_PROPOSAL_SIDE = 2.0


@dataclass(frozen=True)
class ScoredBox:
    """A box with a score in [0, 1] and an optional class label."""

    box: tuple[float, float, float, float]
    score: float
    class_label: Optional[str] = None


@dataclass(frozen=True)
class Detection:
    """Final pipeline output: class, certainty in [0, 1], box."""

    class_label: str
    certainty: float
    box: tuple[float, float, float, float]


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float) -> list[int]:
    """Greedy NMS over parallel box/score arrays; returns kept indices.

    Repeatedly keeps the highest-scoring remaining box (ties broken by
    lower index) and discards every remaining box with IoU >= threshold
    to it. Kept indices come back in descending-score order.
    """
    if not 0 < iou_threshold < 1:
        raise ConfigError(f"nms threshold must be in (0, 1), got {iou_threshold}")
    n = len(boxes)
    if n == 0:
        return []
    boxes = np.asarray(boxes, dtype=np.float64).reshape(n, 4)
    scores = np.asarray(scores, dtype=np.float64)
    # stable sort on -score keeps lower original index first among ties
    order = np.argsort(-scores, kind="stable")
    keep: list[int] = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        if not rest.size:
            break
        ious = geometry.iou_matrix(boxes[i:i + 1], boxes[rest])[0]
        order = rest[ious < iou_threshold]
    return keep


def nms(candidates: Sequence[ScoredBox], iou_threshold: float) -> list[ScoredBox]:
    """Greedy NMS over scored boxes; output sorted by descending score."""
    if not candidates:
        return []
    boxes = np.array([c.box for c in candidates])
    scores = np.array([c.score for c in candidates])
    return [candidates[i] for i in nms_indices(boxes, scores, iou_threshold)]


def select_proposals(scores: np.ndarray, deltas: np.ndarray, anchors: np.ndarray,
                     image_w: float, image_h: float,
                     pre_nms_top_k: int = 200, nms_threshold: float = 0.7,
                     post_nms_top_k: int = 32,
                     min_size: float = MIN_PROPOSAL_SIDE) -> np.ndarray:
    """Turn raw sliding-head output into a ranked proposal set.

    Decodes every anchor delta (log-size components clamped to the
    overflow limit, since raw outputs are unbounded), clips to the image,
    drops boxes with a side below min_size, keeps the pre_nms_top_k best
    by score, suppresses, and keeps post_nms_top_k. Returns (m, 4) boxes.
    """
    if pre_nms_top_k < 1 or post_nms_top_k < 1:
        raise ConfigError("top-k limits must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    boxes = geometry.decode_many(anchors, deltas, clamp=True)
    boxes = geometry.clip_many(boxes, image_w, image_h)

    ok = ((boxes[:, 2] - boxes[:, 0] >= min_size)
          & (boxes[:, 3] - boxes[:, 1] >= min_size))
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return np.zeros((0, 4))
    order = idx[np.argsort(-scores[idx], kind="stable")][:pre_nms_top_k]
    keep = nms_indices(boxes[order], scores[order], nms_threshold)[:post_nms_top_k]
    return boxes[order[keep]]


def finalize_detections(proposals: np.ndarray, class_probs: np.ndarray,
                        class_deltas: np.ndarray, class_names: Sequence[str],
                        image_w: float, image_h: float,
                        score_threshold: float = 0.5,
                        nms_threshold: float = 0.3) -> list[Detection]:
    """Convert region-head output into final detections.

    Each proposal contributes at most one detection: its argmax class,
    with certainty equal to that class's probability. Background rows and
    certainties below score_threshold are dropped; the survivors are
    refined by their class's box delta, clipped, and deduplicated with a
    per-class NMS.

    Args:
        proposals: (n, 4) proposal boxes.
        class_probs: (n, k) probabilities, column 0 = background.
        class_deltas: (n, k, 4) per-class box deltas.
        class_names: k names; index 0 is the background name.
    """
    if not 0 < score_threshold < 1 or not 0 < nms_threshold < 1:
        raise ConfigError("detection thresholds must be in (0, 1)")
    n = len(proposals)
    if n == 0:
        return []
    best = np.argmax(class_probs, axis=1)
    certainty = class_probs[np.arange(n), best]
    detections: list[Detection] = []
    for cls in range(1, len(class_names)):
        rows = np.flatnonzero((best == cls) & (certainty >= score_threshold))
        if rows.size == 0:
            continue
        refined = geometry.decode_many(proposals[rows], class_deltas[rows, cls],
                                       clamp=True)
        refined = geometry.clip_many(refined, image_w, image_h)
        keep = nms_indices(refined, certainty[rows], nms_threshold)
        detections.extend(
            Detection(class_label=class_names[cls],
                      certainty=float(certainty[rows[i]]),
                      box=tuple(refined[i]))
            for i in keep
        )
    detections.sort(key=lambda d: -d.certainty)
    return detections
