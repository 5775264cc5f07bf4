"""Box-preserving dataset augmentation.

The menu is deliberately small: horizontal mirroring plus three
photometric adjustments (brightness, contrast, sharpness). Geometric
distortions that would bend or tear boxes — shear, strain — and
spot noise are excluded; plans containing them are rejected at
validation time.

Augmentation is planned first (AugmentPlan, a JSON-serializable record
of every variant and its transform parameters) and applied second
(expand_dataset), so a run can be reproduced or audited from the plan
alone. Variants inherit kind and split from their original; boxes are
transformed exactly alongside the pixels.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .dataset import (
    Annotation,
    DatasetManifest,
    ManifestEntry,
    Sample,
    load_sample,
    write_voc_xml,
)
from .errors import ConfigError, DataError

PHOTOMETRIC = ("brightness", "contrast", "sharpness")
ALLOWED_STEPS = ("mirror",) + PHOTOMETRIC
EXCLUDED_STEPS = ("shear", "strain", "spot_noise")

PLAN_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# transforms


def mirror_sample(sample: Sample) -> Sample:
    """Horizontal flip; boxes map to (W - x2, y1, W - x1, y2)."""
    w = sample.width
    annotations = []
    for a in sample.annotations:
        if a.box is None:
            annotations.append(Annotation(a.class_label, None))
            continue
        x1, y1, x2, y2 = a.box
        annotations.append(Annotation(a.class_label, (w - x2, y1, w - x1, y2)))
    return Sample(image_id=sample.image_id, pixels=sample.pixels[:, ::-1].copy(),
                  annotations=annotations, kind=sample.kind)


def _to_u8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(pixels), 0, 255).astype(np.uint8)


def adjust_brightness(pixels: np.ndarray, delta: float) -> np.ndarray:
    """Add a constant level, clamped to [0, 255]."""
    return _to_u8(pixels.astype(np.float64) + delta)


def adjust_contrast(pixels: np.ndarray, factor: float) -> np.ndarray:
    """Scale deviations from the image mean by factor (>1 more contrast)."""
    if factor <= 0:
        raise DataError("contrast factor must be > 0")
    p = pixels.astype(np.float64)
    mean = p.mean()
    return _to_u8(mean + factor * (p - mean))


def _box_blur3(p: np.ndarray) -> np.ndarray:
    padded = np.pad(p, 1, mode="edge")
    out = np.zeros_like(p)
    for dy in range(3):
        for dx in range(3):
            out += padded[dy:dy + p.shape[0], dx:dx + p.shape[1]]
    return out / 9.0


def adjust_sharpness(pixels: np.ndarray, amount: float) -> np.ndarray:
    """Unsharp mask: p + amount * (p - blur3x3(p)). amount 0 is identity."""
    if amount < 0:
        raise DataError("sharpness amount must be >= 0")
    p = pixels.astype(np.float64)
    return _to_u8(p + amount * (p - _box_blur3(p)))


_PHOTOMETRIC_FNS = {
    "brightness": lambda px, params: adjust_brightness(px, params["delta"]),
    "contrast": lambda px, params: adjust_contrast(px, params["factor"]),
    "sharpness": lambda px, params: adjust_sharpness(px, params["amount"]),
}


def apply_steps(sample: Sample, steps) -> Sample:
    """Apply an ordered list of plan steps to a sample."""
    out = sample
    for step in steps:
        kind = step["kind"]
        if kind == "mirror":
            out = mirror_sample(out)
        elif kind in _PHOTOMETRIC_FNS:
            out = Sample(image_id=out.image_id,
                         pixels=_PHOTOMETRIC_FNS[kind](out.pixels, step),
                         annotations=list(out.annotations), kind=out.kind)
        else:
            raise DataError(f"unknown transform {kind!r}")
    return out


# ---------------------------------------------------------------------------
# plans


@dataclass
class VariantSpec:
    """One planned augmented image."""

    origin: str
    variant_id: str
    steps: list  # [{"kind": ..., **params}, ...]


@dataclass
class AugmentPlan:
    """Every variant to generate, with exact transform parameters."""

    variants: list = field(default_factory=list)
    multiplier: int = 1
    seed: int | None = None
    schema_version: int = PLAN_SCHEMA_VERSION

    def validate(self) -> None:
        if self.multiplier < 1:
            raise ConfigError("augment plan: multiplier must be >= 1")
        seen = set()
        for v in self.variants:
            if v.variant_id in seen:
                raise ConfigError(f"augment plan: duplicate variant {v.variant_id!r}")
            seen.add(v.variant_id)
            for step in v.steps:
                kind = step.get("kind")
                if kind in EXCLUDED_STEPS:
                    raise ConfigError(
                        f"augment plan: transform {kind!r} is excluded by design "
                        "(it does not preserve annotation boxes)")
                if kind not in ALLOWED_STEPS:
                    raise ConfigError(f"augment plan: unknown transform {kind!r}")
                _validate_params(kind, step, v.variant_id)

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "seed": self.seed,
                "multiplier": self.multiplier,
                "variants": [{"origin": v.origin, "variant_id": v.variant_id,
                              "steps": v.steps} for v in self.variants]}

    @classmethod
    def from_dict(cls, data: dict) -> "AugmentPlan":
        if not isinstance(data, dict):
            raise ConfigError("augment plan: must be a JSON object")
        if data.get("schema_version") != PLAN_SCHEMA_VERSION:
            raise ConfigError("augment plan: unsupported schema_version "
                              f"{data.get('schema_version')!r}")
        variants = []
        for i, row in enumerate(data.get("variants", [])):
            if not isinstance(row, dict) or not isinstance(row.get("steps"), list):
                raise ConfigError(f"augment plan: variants[{i}] is malformed")
            variants.append(VariantSpec(origin=row.get("origin", ""),
                                        variant_id=row.get("variant_id", ""),
                                        steps=row["steps"]))
        plan = cls(variants=variants, multiplier=data.get("multiplier", 1),
                   seed=data.get("seed"))
        plan.validate()
        return plan

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AugmentPlan":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read augment plan {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"augment plan {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)


def _validate_params(kind: str, step: dict, variant: str) -> None:
    needed = {"mirror": (), "brightness": ("delta",),
              "contrast": ("factor",), "sharpness": ("amount",)}[kind]
    for name in needed:
        v = step.get(name)
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"augment plan: {variant}: {kind} needs numeric "
                              f"{name!r}")
    if kind == "contrast" and step["factor"] <= 0:
        raise ConfigError(f"augment plan: {variant}: contrast factor must be > 0")
    if kind == "sharpness" and step["amount"] < 0:
        raise ConfigError(f"augment plan: {variant}: sharpness amount must be >= 0")


def build_plan(manifest: DatasetManifest, cfg, rng_seed: int) -> AugmentPlan:
    """Draw per-variant transform parameters for every eligible original.

    Eligible originals are those whose split is listed in cfg.splits;
    if the manifest carries no split assignments at all, every original
    is eligible. Each original gets multiplier - 1 variants, each a
    fixed-order pipeline of mirror (coin flip, when enabled) and the
    three photometric adjustments with uniformly drawn parameters.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    has_splits = any(e.split is not None for e in manifest.entries)
    variants = []
    for entry in manifest.entries:
        if entry.origin is not None:
            continue
        if has_splits and entry.split not in cfg.splits:
            continue
        for k in range(1, cfg.multiplier):
            steps = []
            if cfg.mirror and rng.uniform() < 0.5:
                steps.append({"kind": "mirror"})
            steps.append({"kind": "brightness",
                          "delta": float(rng.uniform(-cfg.brightness_delta,
                                                     cfg.brightness_delta))})
            steps.append({"kind": "contrast",
                          "factor": float(rng.uniform(cfg.contrast_min,
                                                      cfg.contrast_max))})
            steps.append({"kind": "sharpness",
                          "amount": float(rng.uniform(0.0, cfg.sharpness_max))})
            variants.append(VariantSpec(origin=entry.image_id,
                                        variant_id=f"{entry.image_id}_aug{k}",
                                        steps=steps))
    plan = AugmentPlan(variants=variants, multiplier=cfg.multiplier, seed=rng_seed)
    plan.validate()
    return plan


def expand_dataset(manifest: DatasetManifest, plan: AugmentPlan, root,
                   subdir: str = "augmented") -> DatasetManifest:
    """Materialize a plan: write variant images/annotations under root
    and return a manifest extended with the variant entries.

    Variants carry origin provenance and inherit kind and split, so a
    later split_dataset keeps them glued to their original.
    """
    plan.validate()
    by_id = {e.image_id: e for e in manifest.entries}
    out_img = os.path.join(root, subdir, "images")
    out_ann = os.path.join(root, subdir, "annotations")
    os.makedirs(out_img, exist_ok=True)
    os.makedirs(out_ann, exist_ok=True)

    entries = list(manifest.entries)
    for v in plan.variants:
        if v.origin not in by_id:
            raise DataError(f"augment plan references unknown image {v.origin!r}")
        origin = by_id[v.origin]
        if v.variant_id in by_id:
            raise DataError(f"augment plan would overwrite {v.variant_id!r}")
        sample = load_sample(origin, root)
        out = apply_steps(sample, v.steps)
        image_rel = os.path.join(subdir, "images", f"{v.variant_id}.png")
        ann_rel = os.path.join(subdir, "annotations", f"{v.variant_id}.xml")
        Image.fromarray(out.pixels).save(os.path.join(root, image_rel))
        write_voc_xml(os.path.join(root, ann_rel), v.variant_id,
                      out.width, out.height, out.annotations)
        entries.append(ManifestEntry(
            image_id=v.variant_id, image_path=image_rel, annotation_path=ann_rel,
            format="voc_xml", kind=origin.kind, split=origin.split,
            origin=origin.image_id))
    return DatasetManifest(entries=entries, seed=manifest.seed)
