"""Sliding-window anchor grid generation and training-label assignment.

One anchor is placed per (grid cell, scale, ratio) combination, centered
on the cell. Assignment labels every anchor positive, negative or ignore
against the ground-truth boxes of one image:

* positive -- the anchor holds the highest IoU with some ground-truth box
  among all in-bounds anchors, or its IoU with any ground-truth box meets
  ``pos_iou``;
* negative -- its best IoU over all ground-truth boxes is below ``neg_iou``;
* ignore   -- everything in between, plus anchors crossing the image
  boundary (kept out of training, clipped at inference).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import geometry
from .errors import ConfigError, StructuralError

LABEL_NEGATIVE = 0
LABEL_POSITIVE = 1
LABEL_IGNORE = -1


@dataclass(frozen=True)
class AnchorSpec:
    """Anchor grid parameters.

    scales are square-root areas in pixels (an anchor of scale s and
    ratio r has area s*s and height/width ratio r); stride is the pixel
    distance between adjacent grid centers.
    """

    scales: tuple[float, ...] = (12.0, 20.0, 32.0)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    stride: int = 8

    def __post_init__(self):
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ConfigError(f"anchor scales must be nonempty and positive: {self.scales}")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ConfigError(f"anchor ratios must be nonempty and positive: {self.ratios}")
        if self.stride < 1:
            raise ConfigError(f"anchor stride must be >= 1: {self.stride}")

    @property
    def per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)


@dataclass
class AnchorAssignment:
    """Per-anchor training labels for one image.

    labels holds -1/0/1 (ignore/negative/positive); matched_gt holds the
    index of the assigned ground-truth box for positive anchors and -1
    elsewhere; target_deltas holds the encoded regression target for
    positive anchors and zeros elsewhere.
    """

    labels: np.ndarray
    matched_gt: np.ndarray
    target_deltas: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if len(self.matched_gt) != n or self.target_deltas.shape != (n, 4):
            raise StructuralError("assignment arrays are misaligned")

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == LABEL_POSITIVE)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == LABEL_NEGATIVE)


def generate_anchors(feature_width: int, feature_height: int,
                     spec: AnchorSpec) -> np.ndarray:
    """Build the anchor grid for a feature map.

    Anchors are ordered row-major over cells (y outer, x inner), then
    scale-major, then ratio, matching the channel layout of the proposal
    head. Returns an (feature_height * feature_width * per_cell, 4) array.
    """
    if feature_width < 1 or feature_height < 1:
        raise ConfigError("feature dimensions must be >= 1")
    shapes = np.array(
        [(s / math.sqrt(r), s * math.sqrt(r)) for s in spec.scales for r in spec.ratios]
    )  # (per_cell, [w, h])
    xs = (np.arange(feature_width) + 0.5) * spec.stride
    ys = (np.arange(feature_height) + 0.5) * spec.stride
    cx, cy = np.meshgrid(xs, ys)  # row-major: y outer, x inner
    centers = np.stack([cx.ravel(), cy.ravel()], axis=1)  # (cells, 2)
    half = shapes / 2.0
    lo = centers[:, None, :] - half[None, :, :]
    hi = centers[:, None, :] + half[None, :, :]
    anchors = np.concatenate([lo, hi], axis=2).reshape(-1, 4)
    return anchors


def inside_image_mask(anchors: np.ndarray, image_w: float, image_h: float) -> np.ndarray:
    """True for anchors fully inside the image rectangle."""
    return (
        (anchors[:, 0] >= 0)
        & (anchors[:, 1] >= 0)
        & (anchors[:, 2] <= image_w)
        & (anchors[:, 3] <= image_h)
    )


def assign_anchors(anchors: np.ndarray, gt_boxes: Sequence,
                   pos_iou: float = 0.7, neg_iou: float = 0.3,
                   image_w: float = None, image_h: float = None) -> AnchorAssignment:
    """Label anchors against the ground-truth boxes of one image.

    Args:
        anchors: (n, 4) anchor boxes from :func:`generate_anchors`.
        gt_boxes: sequence of ground-truth boxes (class handling lives in
            the dataset layer; only geometry matters here). May be empty,
            in which case every in-bounds anchor is negative.
        pos_iou: IoU at or above which an anchor is positive.
        neg_iou: IoU below which an anchor is negative.
        image_w, image_h: image extent; anchors crossing it are ignored.
            When omitted, all anchors are treated as in-bounds.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    n = len(anchors)
    if n == 0:
        raise StructuralError("assign_anchors requires a nonempty anchor set")
    if not pos_iou > neg_iou:
        raise ConfigError(f"pos_iou ({pos_iou}) must exceed neg_iou ({neg_iou})")

    gt = np.asarray(gt_boxes, dtype=np.float64)
    if gt.size and (gt.ndim != 2 or gt.shape[1] != 4):
        raise StructuralError(f"gt_boxes must be (m, 4), got shape {gt.shape}")
    gt = gt.reshape(-1, 4)

    labels = np.full(n, LABEL_IGNORE, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    targets = np.zeros((n, 4), dtype=np.float64)

    if image_w is not None and image_h is not None:
        inside = inside_image_mask(anchors, image_w, image_h)
    else:
        inside = np.ones(n, dtype=bool)
    if not np.any(inside):
        return AnchorAssignment(labels, matched, targets)

    if len(gt) == 0:
        labels[inside] = LABEL_NEGATIVE
        return AnchorAssignment(labels, matched, targets)

    overlaps = geometry.iou_matrix(anchors, gt)
    overlaps[~inside] = -1.0  # out-of-bounds anchors never participate
    best_gt = np.argmax(overlaps, axis=1)  # ties -> lowest gt index
    best_iou = overlaps[np.arange(n), best_gt]

    labels[inside & (best_iou < neg_iou)] = LABEL_NEGATIVE
    positive = inside & (best_iou >= pos_iou)

    # Highest-IoU override: the best anchor(s) for each ground-truth box
    # are positive even below pos_iou, so no box goes unmatched.
    gt_best = overlaps.max(axis=0)
    for j in range(len(gt)):
        if gt_best[j] > 0:
            positive |= overlaps[:, j] == gt_best[j]
    positive &= inside

    idx = np.flatnonzero(positive)
    labels[idx] = LABEL_POSITIVE
    matched[idx] = best_gt[idx]
    if len(idx):
        targets[idx] = geometry.encode_many(anchors[idx], gt[best_gt[idx]])
    return AnchorAssignment(labels, matched, targets)


def sample_minibatch(assignment: AnchorAssignment, batch_size: int,
                     pos_fraction: float, rng_seed: int) -> np.ndarray:
    """Draw a training minibatch of anchor indices.

    Up to ``batch_size * pos_fraction`` positives are sampled uniformly
    without replacement; the remainder is filled with negatives. Ignored
    anchors are never sampled. Deterministic for a given seed; positives
    precede negatives in the returned index array.
    """
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    if not 0 < pos_fraction < 1:
        raise ConfigError(f"pos_fraction must be in (0, 1), got {pos_fraction}")
    pos = assignment.positive_indices
    neg = assignment.negative_indices
    if len(neg) == 0:
        raise StructuralError("assignment has no negative anchors to sample")

    rng = np.random.Generator(np.random.PCG64(rng_seed))
    n_pos = min(len(pos), int(batch_size * pos_fraction))
    n_neg = min(len(neg), batch_size - n_pos)
    pos_pick = rng.choice(pos, size=n_pos, replace=False) if n_pos else pos[:0]
    neg_pick = rng.choice(neg, size=n_neg, replace=False)
    return np.concatenate([pos_pick, neg_pick]).astype(np.int64)
