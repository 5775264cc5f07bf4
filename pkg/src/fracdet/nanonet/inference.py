"""Single-image inference: run the trained network end to end and
return final detections."""

from __future__ import annotations

import numpy as np

from ..anchors import AnchorSpec, generate_anchors
from ..dataset import CLASS_NAMES
from ..proposals import finalize_detections, select_proposals
from .network import (
    NetworkParams,
    backbone_forward,
    detect_forward,
    padded_size,
    rpn_forward,
    total_stride,
)


def detect_image(pixels: np.ndarray, net: NetworkParams, cfg,
                 score_threshold: float | None = None) -> list:
    """Detect lesions in one uint8 grayscale image.

    Args:
        pixels: (H, W) uint8 image.
        net: trained parameters.
        cfg: a PipelineConfig; proposal and detect sections apply.
        score_threshold: optional override of cfg.detect.score_threshold
            (evaluation uses a lower one to trace the full PR curve).

    Returns:
        Detections sorted by descending certainty.
    """
    image = pixels.astype(np.float64) / 255.0
    stride = total_stride(net.arch)
    h, w = padded_size(*image.shape, stride)
    features = backbone_forward(image, net)
    probs, deltas = rpn_forward(features, net)
    hf, wf = features.data.shape[1:]
    spec = AnchorSpec(scales=tuple(cfg.anchors.scales),
                      ratios=tuple(cfg.anchors.ratios), stride=cfg.anchors.stride)
    anchors = generate_anchors(wf, hf, spec)
    rois = select_proposals(probs.data[:, 1], deltas.data, anchors, w, h,
                            cfg.proposals.pre_nms_top_k,
                            cfg.proposals.nms_threshold,
                            cfg.proposals.post_nms_top_k,
                            cfg.proposals.min_size)
    if not len(rois):
        return []
    class_probs, class_deltas = detect_forward(features, rois, net, stride)
    threshold = (cfg.detect.score_threshold if score_threshold is None
                 else score_threshold)
    return finalize_detections(rois, class_probs.data, class_deltas.data,
                               CLASS_NAMES, image_w=pixels.shape[1],
                               image_h=pixels.shape[0],
                               score_threshold=threshold,
                               nms_threshold=cfg.detect.nms_threshold)
