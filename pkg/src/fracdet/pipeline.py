"""High-level commands behind the CLI: each function does one stage of
the synth -> augment -> train -> detect/eval/render flow on disk.

These are plain functions over paths so they can be exercised directly
in tests; the CLI only parses arguments and maps errors to exit codes.
All randomness flows from the single seed argument.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
from PIL import Image

from .augment import build_plan, expand_dataset
from .dataset import (
    DatasetManifest,
    load_split,
    resize_sample,
    split_dataset,
    synth_generate,
)
from .errors import DataError
from .evaluation import EvalReport, evaluate_images, emit_report
from .nanonet.inference import detect_image
from .nanonet.network import load_checkpoint, save_checkpoint
from .nanonet.training import train

DETECTIONS_SCHEMA_VERSION = 1
CHECKPOINT_NAME = "checkpoint.frdt"
HISTORY_NAME = "history.json"
REPORT_JSON = "report.json"
REPORT_CSV = "report.csv"
PLAN_NAME = "augment_plan.json"
AUGMENTED_MANIFEST_NAME = "manifest_augmented.json"


def _load_manifest(path) -> DatasetManifest:
    if not os.path.exists(path):
        raise DataError(f"manifest not found: {path}")
    return DatasetManifest.load(path)


def _prepared_samples(manifest: DatasetManifest, root, split, cfg) -> list:
    samples = load_split(manifest, root, split)
    if cfg.dataset.resolution is not None:
        samples = [resize_sample(s, cfg.dataset.resolution) for s in samples]
    return samples


def run_synth(cfg, seed: int, out_dir) -> DatasetManifest:
    """Generate the synthetic corpus, assign splits, write everything."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = synth_generate(cfg.synth, seed, out_dir)
    manifest = split_dataset(manifest, cfg.synth.train_fraction, seed)
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def run_augment(cfg, manifest_path, seed: int) -> tuple:
    """Plan and materialize augmentation next to the manifest.

    Writes the plan, the variant images/annotations, and an extended
    manifest (manifest_augmented.json) in the dataset directory.

    Returns (plan, augmented manifest, augmented manifest path).
    """
    manifest = _load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    plan = build_plan(manifest, cfg.augment, seed)
    plan.save(os.path.join(root, PLAN_NAME))
    expanded = expand_dataset(manifest, plan, root)
    out_path = os.path.join(root, AUGMENTED_MANIFEST_NAME)
    expanded.save(out_path)
    return plan, expanded, out_path


def run_train(cfg, manifest_path, seed: int, out_dir) -> tuple:
    """Train on the manifest's train split; write checkpoint + history.

    Returns (net, history, checkpoint path).
    """
    manifest = _load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    split = "train" if any(e.split for e in manifest.entries) else None
    samples = _prepared_samples(manifest, root, split, cfg)
    net, history = train(samples, cfg, seed)
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, CHECKPOINT_NAME)
    save_checkpoint(net, ckpt_path)
    with open(os.path.join(out_dir, HISTORY_NAME), "w", encoding="utf-8") as fh:
        json.dump({"schema_version": 1, "seed": seed, "epochs": history},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return net, history, ckpt_path


def detections_to_dict(detections, image_name: str) -> dict:
    return {
        "schema_version": DETECTIONS_SCHEMA_VERSION,
        "image": image_name,
        "detections": [
            {"class_label": d.class_label,
             "certainty": round(float(d.certainty), 6),
             "box": [round(float(v), 2) for v in d.box]}
            for d in detections
        ],
    }


def run_detect(cfg, checkpoint_path, image_path, out_path) -> dict:
    """Detect on one image; write and return the detections record."""
    net = load_checkpoint(checkpoint_path)
    try:
        with Image.open(image_path) as img:
            pixels = np.asarray(img.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read image {image_path}: {exc}") from exc
    detections = detect_image(pixels, net, cfg)
    record = detections_to_dict(detections, os.path.basename(str(image_path)))
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return record


def evaluate_checkpoint(cfg, net, samples) -> EvalReport:
    """Evaluate a network over loaded samples."""
    per_image = []
    for sample in samples:
        detections = detect_image(sample.pixels, net, cfg,
                                  score_threshold=cfg.eval.score_threshold)
        per_image.append((detections, sample.annotations, sample.has_fracture()))
    return evaluate_images(per_image, cfg.eval)


def run_eval(cfg, checkpoint_path, manifest_path, seed: int, out_dir,
             split: str = "test") -> EvalReport:
    """Evaluate the test split; write report.json/report.csv."""
    net = load_checkpoint(checkpoint_path)
    manifest = _load_manifest(manifest_path)
    root = os.path.dirname(os.path.abspath(manifest_path))
    samples = _prepared_samples(manifest, root, split, cfg)
    if cfg.eval.augment_test:
        from .augment import apply_steps  # local to keep the common path lean

        plan_cfg = dataclasses.replace(cfg.augment, splits=(split,))
        plan = build_plan(DatasetManifest(
            entries=[e for e in manifest.entries if e.split == split]),
            plan_cfg, seed)
        by_id = {s.image_id: s for s in samples}
        for v in plan.variants:
            samples.append(apply_steps(by_id[v.origin], v.steps))
    if not samples:
        raise DataError(f"split {split!r} of {manifest_path} is empty")
    report = evaluate_checkpoint(cfg, net, samples)
    os.makedirs(out_dir, exist_ok=True)
    emit_report(report, os.path.join(out_dir, REPORT_JSON),
                os.path.join(out_dir, REPORT_CSV))
    return report


def run_render(cfg, checkpoint_path, image_path, out_path) -> list:
    """Detect on one image and write an annotated copy."""
    from .render import render_detections

    net = load_checkpoint(checkpoint_path)
    try:
        with Image.open(image_path) as img:
            pixels = np.asarray(img.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read image {image_path}: {exc}") from exc
    detections = detect_image(pixels, net, cfg)
    render_detections(pixels, detections, out_path)
    return detections
