"""Detection evaluation: greedy matching, average precision, and
image-level classification metrics.

Matching follows the classic protocol: within an image, detections are
processed in descending certainty; each is a true positive if it
overlaps an unmatched same-class ground-truth box at or above the IoU
threshold (taking the best-IoU such box), otherwise a false positive —
duplicates on an already-matched box count as false positives.

AP supports the 11-point interpolation (mean over recalls 0, 0.1, ...,
1.0 of the maximum precision at recall >= r) and the exact
area-under-envelope variant. Classes with zero ground-truth boxes have
no defined AP and are reported as absent, never as 0.

Image-level tags (annotations without boxes) contribute only to the
has-lesion image classification, mirroring how negative images carry a
class but nothing to localize.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .dataset import CLASS_FRACTURE
from .errors import DataError

REPORT_SCHEMA_VERSION = 1

RECALL_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 1))


@dataclass
class DetectionMatch:
    """One scored detection with its matching outcome."""

    class_label: str
    certainty: float
    is_tp: bool


@dataclass
class MatchResult:
    """Per-image matching outcome: scored detections plus gt counts."""

    matches: list
    gt_counts: dict  # class -> number of gt boxes in the image
    n_matched: int


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def match_detections(detections, annotations, iou_threshold: float = 0.5) -> MatchResult:
    """Greedily match one image's detections against its gt boxes.

    Args:
        detections: Detection objects (class_label, certainty, box).
        annotations: dataset Annotations; box-less ones are skipped.
        iou_threshold: minimum IoU for a true positive.
    """
    gt = [(a.class_label, a.box) for a in annotations if a.box is not None]
    gt_counts = {}
    for label, _ in gt:
        gt_counts[label] = gt_counts.get(label, 0) + 1
    taken = [False] * len(gt)

    order = np.argsort([-d.certainty for d in detections], kind="stable")
    matches = []
    n_matched = 0
    for i in order:
        det = detections[i]
        best_j = -1
        best_iou = 0.0
        for j, (label, box) in enumerate(gt):
            if taken[j] or label != det.class_label:
                continue
            iou = _iou(det.box, box)
            if iou >= iou_threshold and iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0:
            taken[best_j] = True
            n_matched += 1
            matches.append(DetectionMatch(det.class_label, det.certainty, True))
        else:
            matches.append(DetectionMatch(det.class_label, det.certainty, False))
    return MatchResult(matches=matches, gt_counts=gt_counts, n_matched=n_matched)


def average_precision(scored, total_gt: int,
                      interpolation: str = "voc2007_11pt"):
    """AP from pooled (certainty, is_tp) pairs of one class.

    Args:
        scored: sequence of (certainty, is_tp) across all images.
        total_gt: ground-truth box count of the class.
        interpolation: 'voc2007_11pt' or 'all_points'.

    Returns:
        AP in [0, 1], or None when total_gt is 0 (undefined).
    """
    if total_gt < 0:
        raise DataError("total_gt must be >= 0")
    if total_gt == 0:
        return None
    if not scored:
        return 0.0
    certainty = np.array([s[0] for s in scored], dtype=np.float64)
    is_tp = np.array([bool(s[1]) for s in scored])
    order = np.argsort(-certainty, kind="stable")
    tp_cum = np.cumsum(is_tp[order])
    ranks = np.arange(1, len(order) + 1)
    precision = tp_cum / ranks
    recall = tp_cum / float(total_gt)

    if interpolation == "voc2007_11pt":
        total = 0.0
        for r in RECALL_GRID:
            mask = recall >= r - 1e-12
            total += float(precision[mask].max()) if np.any(mask) else 0.0
        return total / len(RECALL_GRID)
    if interpolation == "all_points":
        # precision envelope, integrated over recall
        env = np.maximum.accumulate(precision[::-1])[::-1]
        ap = 0.0
        prev_r = 0.0
        for k in range(len(recall)):
            if recall[k] > prev_r:
                ap += (recall[k] - prev_r) * env[k]
                prev_r = recall[k]
        return float(ap)
    raise DataError(f"unknown interpolation {interpolation!r}")


def image_accuracy(predicted_positive, actually_positive) -> dict:
    """Image-level confusion summary.

    Args:
        predicted_positive: per-image booleans (a lesion was claimed).
        actually_positive: per-image booleans (a lesion is present).

    Returns:
        dict with accuracy, sensitivity, specificity; a rate whose
        denominator is empty is None.
    """
    pred = np.asarray(predicted_positive, dtype=bool)
    true = np.asarray(actually_positive, dtype=bool)
    if pred.shape != true.shape:
        raise DataError("prediction/label lists differ in length")
    if pred.size == 0:
        return {"accuracy": None, "sensitivity": None, "specificity": None}
    correct = pred == true
    pos = true.sum()
    neg = true.size - pos
    return {
        "accuracy": float(correct.mean()),
        "sensitivity": float(correct[true].mean()) if pos else None,
        "specificity": float(correct[~true].mean()) if neg else None,
    }


@dataclass
class EvalReport:
    """Aggregate evaluation outcome over one split."""

    per_class_ap: dict
    mean_ap: float | None
    accuracy: float | None
    sensitivity: float | None
    specificity: float | None
    n_images: int
    gt_counts: dict
    detection_histogram: dict  # detections-per-image -> image count
    iou_threshold: float
    interpolation: str
    decision_threshold: float
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "per_class_ap": dict(self.per_class_ap),
            "mean_ap": self.mean_ap,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "n_images": self.n_images,
            "gt_counts": dict(self.gt_counts),
            "detection_histogram": {str(k): v for k, v
                                    in sorted(self.detection_histogram.items())},
            "iou_threshold": self.iou_threshold,
            "interpolation": self.interpolation,
            "decision_threshold": self.decision_threshold,
        }


def evaluate_images(per_image, eval_cfg) -> EvalReport:
    """Score a split from per-image (detections, annotations, has_lesion).

    Args:
        per_image: list of (detections, annotations, actually_positive).
        eval_cfg: an EvalConfig (iou/interpolation/decision thresholds).
    """
    pooled = {}
    gt_totals = {}
    pred_pos = []
    true_pos = []
    histogram = {}
    for detections, annotations, actually_positive in per_image:
        result = match_detections(detections, annotations, eval_cfg.iou_threshold)
        for label, n in result.gt_counts.items():
            gt_totals[label] = gt_totals.get(label, 0) + n
        for m in result.matches:
            pooled.setdefault(m.class_label, []).append((m.certainty, m.is_tp))
        claimed = any(d.class_label == CLASS_FRACTURE
                      and d.certainty >= eval_cfg.decision_threshold
                      for d in detections)
        pred_pos.append(claimed)
        true_pos.append(bool(actually_positive))
        histogram[len(detections)] = histogram.get(len(detections), 0) + 1

    per_class_ap = {}
    for label in sorted(set(gt_totals) | set(pooled)):
        ap = average_precision(pooled.get(label, []), gt_totals.get(label, 0),
                               eval_cfg.interpolation)
        if ap is not None:
            per_class_ap[label] = ap
    mean_ap = (float(np.mean(list(per_class_ap.values())))
               if per_class_ap else None)
    rates = image_accuracy(pred_pos, true_pos)
    return EvalReport(per_class_ap=per_class_ap, mean_ap=mean_ap,
                      accuracy=rates["accuracy"],
                      sensitivity=rates["sensitivity"],
                      specificity=rates["specificity"],
                      n_images=len(per_image), gt_counts=gt_totals,
                      detection_histogram=histogram,
                      iou_threshold=eval_cfg.iou_threshold,
                      interpolation=eval_cfg.interpolation,
                      decision_threshold=eval_cfg.decision_threshold)


def emit_report(report: EvalReport, json_path, csv_path=None) -> None:
    """Write the report as JSON (sorted keys) and optionally CSV."""
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is None:
        return
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "class", "value"])
        for label, ap in sorted(report.per_class_ap.items()):
            writer.writerow(["ap", label, f"{ap:.6f}"])
        for name in ("mean_ap", "accuracy", "sensitivity", "specificity"):
            value = getattr(report, name)
            writer.writerow([name, "", "" if value is None else f"{value:.6f}"])
        writer.writerow(["n_images", "", report.n_images])
