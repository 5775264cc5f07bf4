"""End-to-end training of the detector by momentum SGD on the joint
two-stage loss, plus the finite-difference gradient check harness.

Each image contributes one SGD step: the sliding-head loss is evaluated
on a sampled anchor minibatch, the region head's loss on a sampled set of
proposals (with ground-truth boxes appended so the head sees foreground
from the first epoch), and both backpropagate through the shared
backbone in a single pass. Proposal boxes and sampled indices are
treated as constants of the step, so gradients never flow through the
selection itself.

Everything is deterministic for a given seed: image order, anchor and
region sampling all derive from one generator consumed in fixed order.
"""

from __future__ import annotations

import logging
import time

import numpy as np

from .. import geometry
from ..anchors import (
    LABEL_POSITIVE,
    AnchorSpec,
    assign_anchors,
    generate_anchors,
    sample_minibatch,
)
from ..errors import GradientError, TrainingError
from ..loss import (
    LossInputs,
    multiclass_loss,
    multiclass_loss_grad,
    multitask_loss,
    multitask_loss_grad,
)
from ..proposals import select_proposals
from .network import (
    NetworkParams,
    backbone_forward,
    detect_forward,
    init_params,
    padded_size,
    rpn_forward,
    total_stride,
)
from .tensor import backward_from

log = logging.getLogger(__name__)


class SGD:
    """Momentum SGD over a parameter set.

    step() applies p <- p - lr * (grad + momentum * velocity), refuses
    non-finite gradients, and clears the gradient buffers.
    """

    def __init__(self, net: NetworkParams, learning_rate: float, momentum: float = 0.9):
        if learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        self.net = net
        self.lr = learning_rate
        self.momentum = momentum
        self._velocity = {k: np.zeros_like(v.data) for k, v in net.items()}

    def step(self) -> None:
        for name, p in self.net.items():
            if p.grad is None:
                continue
            if not np.all(np.isfinite(p.grad)):
                finite = p.grad[np.isfinite(p.grad)]
                raise GradientError(name, float(np.abs(finite).max()) if finite.size else 0.0)
            v = self._velocity[name]
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v
        self.net.zero_grads()


def backward_and_step(output_grads, optimizer: SGD) -> None:
    """Backpropagate seeded output gradients and apply one SGD update."""
    backward_from(output_grads)
    optimizer.step()


def _assign_rois(rois: np.ndarray, gt: np.ndarray, gt_classes: np.ndarray,
                 fg_iou: float):
    """Per-proposal class target (0 = background) and regression target."""
    n = len(rois)
    target_class = np.zeros(n, dtype=np.int64)
    target_delta = np.zeros((n, 4))
    if len(gt) and n:
        overlaps = geometry.iou_matrix(rois, gt)
        best = overlaps.argmax(axis=1)
        best_iou = overlaps[np.arange(n), best]
        fg = best_iou >= fg_iou
        target_class[fg] = gt_classes[best[fg]]
        if np.any(fg):
            target_delta[fg] = geometry.encode_many(rois[fg], gt[best[fg]])
    return target_class, target_delta


def _sample_rois(target_class: np.ndarray, batch: int, fg_fraction: float,
                 rng_seed: int) -> np.ndarray:
    fg = np.flatnonzero(target_class > 0)
    bg = np.flatnonzero(target_class == 0)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    n_fg = min(len(fg), int(batch * fg_fraction))
    n_bg = min(len(bg), batch - n_fg)
    picks = []
    if n_fg:
        picks.append(rng.choice(fg, size=n_fg, replace=False))
    if n_bg:
        picks.append(rng.choice(bg, size=n_bg, replace=False))
    if not picks:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(picks).astype(np.int64)


class _StepPlan:
    """Frozen data-dependent choices of one training step.

    Holding these fixed makes the loss a smooth function of the
    parameters, which is what both the SGD step and the
    finite-difference check differentiate.
    """

    __slots__ = ("anchor_idx", "p_star", "t_star", "rois", "roi_class", "roi_delta")

    def __init__(self, anchor_idx, p_star, t_star, rois, roi_class, roi_delta):
        self.anchor_idx = anchor_idx
        self.p_star = p_star
        self.t_star = t_star
        self.rois = rois
        self.roi_class = roi_class
        self.roi_delta = roi_delta


def _forward_outputs(net, image, anchors_cache):
    features = backbone_forward(image, net)
    hf, wf = features.data.shape[1:]
    key = (hf, wf)
    if key not in anchors_cache:
        anchors_cache[key] = generate_anchors(wf, hf, anchors_cache["spec"])
    probs, deltas = rpn_forward(features, net)
    return features, probs, deltas, anchors_cache[key]


def _make_plan(probs, deltas, anchors, gt, gt_classes, image_hw, cfg,
               seeds) -> _StepPlan:
    h, w = image_hw
    assignment = assign_anchors(anchors, gt, cfg.anchors.pos_iou, cfg.anchors.neg_iou,
                                image_w=w, image_h=h)
    anchor_idx = sample_minibatch(assignment, cfg.loss.batch_size,
                                  cfg.loss.pos_fraction, seeds[0])
    p_star = (assignment.labels[anchor_idx] == LABEL_POSITIVE).astype(np.float64)
    t_star = assignment.target_deltas[anchor_idx]

    rois = select_proposals(probs.data[:, 1], deltas.data, anchors, w, h,
                            cfg.proposals.pre_nms_top_k, cfg.proposals.nms_threshold,
                            cfg.proposals.post_nms_top_k, cfg.proposals.min_size)
    if cfg.train.append_gt_to_proposals and len(gt):
        rois = np.concatenate([rois, gt])
    roi_class, roi_delta = _assign_rois(rois, gt, gt_classes, cfg.train.roi_fg_iou)
    keep = _sample_rois(roi_class, cfg.train.roi_batch, cfg.train.roi_fg_fraction,
                        seeds[1])
    return _StepPlan(anchor_idx, p_star, t_star, rois[keep],
                     roi_class[keep], roi_delta[keep])


def _losses_and_grads(net, features, probs, deltas, plan, cfg, stride):
    """Evaluate both loss stages for a frozen plan.

    Returns the loss parts and the (tensor, gradient) seed pairs for the
    backward pass.
    """
    idx = plan.anchor_idx
    inputs = LossInputs(p=probs.data[idx, 1], p_star=plan.p_star,
                        t=deltas.data[idx], t_star=plan.t_star,
                        n_cls=len(idx), n_reg=len(idx), lam=cfg.loss.lam)
    rpn_report = multitask_loss(inputs)
    dp, dt = multitask_loss_grad(inputs)
    gp = np.zeros_like(probs.data)
    gp[idx, 1] = dp
    gd = np.zeros_like(deltas.data)
    gd[idx] = dt
    pairs = [(probs, gp), (deltas, gd)]

    parts = {"rpn_cls": rpn_report.cls_term, "rpn_reg": rpn_report.reg_term,
             "head_cls": 0.0, "head_reg": 0.0,
             "total": rpn_report.total}
    if len(plan.rois):
        class_probs, head_deltas = detect_forward(features, plan.rois, net, stride)
        rows = np.arange(len(plan.rois))
        d_true = class_probs.data
        sel_deltas = head_deltas.data[rows, plan.roi_class]
        fg = (plan.roi_class > 0).astype(np.float64)
        head_report = multiclass_loss(d_true, plan.roi_class, sel_deltas,
                                      plan.roi_delta, fg, len(rows), len(rows),
                                      cfg.loss.lam)
        dprobs, ddeltas = multiclass_loss_grad(d_true, plan.roi_class, sel_deltas,
                                               plan.roi_delta, fg, len(rows),
                                               len(rows), cfg.loss.lam)
        gdelt = np.zeros_like(head_deltas.data)
        gdelt[rows, plan.roi_class] = ddeltas
        pairs += [(class_probs, dprobs), (head_deltas, gdelt)]
        parts["head_cls"] = head_report.cls_term
        parts["head_reg"] = head_report.reg_term
        parts["total"] += head_report.total
    return parts, pairs


def train(samples, cfg, rng_seed: int):
    """Train a detector on loaded samples.

    Args:
        samples: iterable of dataset Samples (training split, already
            augmented and resized).
        cfg: a PipelineConfig.
        rng_seed: master seed; identical (samples, cfg, seed) triples
            reproduce identical parameters and history.

    Returns:
        (NetworkParams, history) where history holds one dict per epoch
        with keys epoch, total, rpn_cls, rpn_reg, head_cls, head_reg.
    """
    samples = list(samples)
    if not samples:
        raise TrainingError("training set is empty")
    if not any(len(s.boxed_targets()[0]) for s in samples):
        raise TrainingError("no annotation boxes anywhere in the training set; "
                            "nothing to regress")

    arch = cfg.network_arch()
    net = init_params(arch, rng_seed)
    stride = total_stride(net.arch)
    optimizer = SGD(net, cfg.train.learning_rate, cfg.train.momentum)
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    anchors_cache = {"spec": AnchorSpec(scales=tuple(cfg.anchors.scales),
                                        ratios=tuple(cfg.anchors.ratios),
                                        stride=cfg.anchors.stride)}

    history = []
    for epoch in range(cfg.train.epochs):
        t0 = time.monotonic()
        order = rng.permutation(len(samples))
        sums = {"total": 0.0, "rpn_cls": 0.0, "rpn_reg": 0.0,
                "head_cls": 0.0, "head_reg": 0.0}
        for i in order:
            sample = samples[i]
            image = sample.pixels.astype(np.float64) / 255.0
            h, w = padded_size(*image.shape, stride)
            seeds = (int(rng.integers(2**63)), int(rng.integers(2**63)))
            features, probs, deltas, anchors = _forward_outputs(net, image, anchors_cache)
            gt, gt_classes = sample.boxed_targets()
            plan = _make_plan(probs, deltas, anchors, gt, gt_classes, (h, w),
                              cfg, seeds)
            parts, pairs = _losses_and_grads(net, features, probs, deltas,
                                             plan, cfg, stride)
            backward_and_step(pairs, optimizer)
            for k in sums:
                sums[k] += parts[k]
        row = {k: v / len(samples) for k, v in sums.items()}
        row["epoch"] = epoch + 1
        history.append(row)
        log.info("epoch %d/%d: loss %.4f (%.1fs)", epoch + 1, cfg.train.epochs,
                 row["total"], time.monotonic() - t0)
    return net, history


# ---------------------------------------------------------------------------
# finite-difference verification


def gradient_check(cfg, image_size: int = 32, n_params: int = 60,
                   step: float = 1e-5, rng_seed: int = 7):
    """Compare analytic and central finite-difference gradients of the
    full two-stage loss with respect to randomly sampled weights.

    Builds one frozen training step on a random image, then treats its
    total loss as a scalar function of the parameters. Returns
    (max_relative_error, per_sample_rows).
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    arch = cfg.network_arch()
    net = init_params(arch, rng_seed)
    stride = total_stride(net.arch)
    image = rng.uniform(0.0, 1.0, size=(image_size, image_size))
    s = image_size
    gt = np.array([[s * 0.2, s * 0.25, s * 0.7, s * 0.8]])
    anchors_cache = {"spec": AnchorSpec(scales=tuple(cfg.anchors.scales),
                                        ratios=tuple(cfg.anchors.ratios),
                                        stride=cfg.anchors.stride)}

    features, probs, deltas, anchors = _forward_outputs(net, image, anchors_cache)
    plan = _make_plan(probs, deltas, anchors, gt, np.array([1], dtype=np.int64),
                      (s, s), cfg,
                      (int(rng.integers(2**63)), int(rng.integers(2**63))))

    def loss_value() -> float:
        f, p, d, _ = _forward_outputs(net, image, anchors_cache)
        parts, _ = _losses_and_grads(net, f, p, d, plan, cfg, stride)
        return parts["total"]

    # analytic pass
    net.zero_grads()
    parts, pairs = _losses_and_grads(net, features, probs, deltas, plan, cfg, stride)
    backward_from(pairs)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in net.items()}
    net.zero_grads()

    names = list(net.params)
    sizes = np.array([net[name].data.size for name in names], dtype=np.float64)
    rows = []
    max_rel = 0.0
    for _ in range(n_params):
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        flat = int(rng.integers(net[name].data.size))
        buf = net[name].data.ravel()
        orig = buf[flat]
        buf[flat] = orig + step
        up = loss_value()
        buf[flat] = orig - step
        down = loss_value()
        buf[flat] = orig
        fd = (up - down) / (2 * step)
        an = analytic[name].ravel()[flat]
        denom = max(abs(an), abs(fd))
        rel = 0.0 if denom < 1e-12 else abs(an - fd) / denom
        max_rel = max(max_rel, rel)
        rows.append({"param": name, "index": flat, "analytic": an,
                     "fd": fd, "rel_error": rel})
    return max_rel, rows
