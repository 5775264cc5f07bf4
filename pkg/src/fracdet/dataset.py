"""Dataset handling: annotation parsing, manifests, splits, and the
synthetic corpus generator.

Two annotation formats are accepted (documented with examples in
docs/formats.md): Pascal-VOC-style XML (object/name/bndbox) and a
minimal VOTT-style JSON export (asset + regions). A dataset is
described by a versioned JSON manifest listing every image with its
annotation file, kind, optional train/test split, and provenance
(which original an augmented variant came from).

Images are single-channel uint8 arrays throughout. Boxes are
(x1, y1, x2, y2) floats in pixel coordinates with x2/y2 exclusive-ish
edges (x2 > x1, y2 > y1), matching the geometry module.
"""

from __future__ import annotations

import json
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image

from .errors import DataError

CLASS_FRACTURE = "fracture"
CLASS_HAND = "hand_no_fracture"
CLASS_NAMES = ("background", CLASS_FRACTURE, CLASS_HAND)

KIND_POSITIVE = "positive"
KIND_HAND = "hand_negative"
KIND_PURE = "pure_negative"
KINDS = (KIND_POSITIVE, KIND_HAND, KIND_PURE)

SPLITS = ("train", "test")

MANIFEST_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class Annotation:
    """One labeled region: a class name and its box (or None for
    image-level labels)."""

    class_label: str
    box: tuple | None = None


@dataclass
class Sample:
    """A loaded image with its annotations."""

    image_id: str
    pixels: np.ndarray  # (H, W) uint8
    annotations: list
    kind: str

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def has_fracture(self) -> bool:
        return any(a.class_label == CLASS_FRACTURE for a in self.annotations)

    def fracture_boxes(self) -> np.ndarray:
        boxes = [a.box for a in self.annotations
                 if a.class_label == CLASS_FRACTURE and a.box is not None]
        return np.array(boxes, dtype=np.float64).reshape(-1, 4)

    def boxed_targets(self) -> tuple:
        """Boxes and class indices of every boxed annotation.

        Returns ((m, 4) boxes, (m,) indices into CLASS_NAMES). Image-level
        tags (box None) are excluded; they matter only for image-level
        classification.
        """
        boxes = [a.box for a in self.annotations if a.box is not None]
        classes = [CLASS_NAMES.index(a.class_label)
                   for a in self.annotations if a.box is not None]
        return (np.array(boxes, dtype=np.float64).reshape(-1, 4),
                np.array(classes, dtype=np.int64))


@dataclass
class ManifestEntry:
    """One manifest row; paths are relative to the manifest directory."""

    image_id: str
    image_path: str
    annotation_path: str | None
    format: str
    kind: str
    split: str | None = None
    origin: str | None = None  # image_id of the original, for variants


@dataclass
class DatasetManifest:
    """Ordered dataset listing plus the seed that produced it."""

    entries: list = field(default_factory=list)
    seed: int | None = None
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "entries": [
                {"image_id": e.image_id, "image_path": e.image_path,
                 "annotation_path": e.annotation_path, "format": e.format,
                 "kind": e.kind, "split": e.split, "origin": e.origin}
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, source: str = "<manifest>") -> "DatasetManifest":
        if not isinstance(data, dict):
            raise DataError(f"{source}: manifest must be a JSON object")
        version = data.get("schema_version")
        if version != MANIFEST_SCHEMA_VERSION:
            raise DataError(f"{source}: unsupported manifest schema_version "
                            f"{version!r} (expected {MANIFEST_SCHEMA_VERSION})")
        seed = data.get("seed")
        if seed is not None and not isinstance(seed, int):
            raise DataError(f"{source}: seed must be an integer or null")
        raw = data.get("entries")
        if not isinstance(raw, list):
            raise DataError(f"{source}: entries must be a list")
        entries = []
        seen = set()
        for i, row in enumerate(raw):
            where = f"{source}: entries[{i}]"
            if not isinstance(row, dict):
                raise DataError(f"{where} must be an object")
            for key in ("image_id", "image_path", "format", "kind"):
                if not isinstance(row.get(key), str) or not row.get(key):
                    raise DataError(f"{where} needs a non-empty string '{key}'")
            if row["kind"] not in KINDS:
                raise DataError(f"{where}: unknown kind {row['kind']!r}")
            if row["format"] not in ("voc_xml", "vott_json"):
                raise DataError(f"{where}: unknown format {row['format']!r}")
            split = row.get("split")
            if split is not None and split not in SPLITS:
                raise DataError(f"{where}: split must be null or one of {SPLITS}")
            ann = row.get("annotation_path")
            if ann is not None and not isinstance(ann, str):
                raise DataError(f"{where}: annotation_path must be a string or null")
            origin = row.get("origin")
            if origin is not None and not isinstance(origin, str):
                raise DataError(f"{where}: origin must be a string or null")
            if row["image_id"] in seen:
                raise DataError(f"{where}: duplicate image_id {row['image_id']!r}")
            seen.add(row["image_id"])
            entries.append(ManifestEntry(
                image_id=row["image_id"], image_path=row["image_path"],
                annotation_path=ann, format=row["format"], kind=row["kind"],
                split=split, origin=origin))
        ids = {e.image_id for e in entries}
        for e in entries:
            if e.origin is not None and e.origin not in ids:
                raise DataError(f"{source}: {e.image_id} references missing "
                                f"origin {e.origin!r}")
        return cls(entries=entries, seed=seed)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data, source=str(path))


# ---------------------------------------------------------------------------
# annotation formats


def _parse_box(vals, where: str) -> tuple:
    try:
        x1, y1, x2, y2 = (float(v) for v in vals)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: box coordinates must be numeric") from exc
    if not (x2 > x1 and y2 > y1):
        raise DataError(f"{where}: degenerate box ({x1}, {y1}, {x2}, {y2})")
    return (x1, y1, x2, y2)


def _load_voc_xml(path) -> list:
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        raise DataError(f"{path}: malformed XML: {exc}") from exc
    out = []
    for i, obj in enumerate(root.iter("object")):
        where = f"{path}: object {i}"
        name = obj.findtext("name")
        if not name:
            raise DataError(f"{where} has no <name>")
        bnd = obj.find("bndbox")
        if bnd is None:
            # no box: an image-level tag
            out.append(Annotation(class_label=name, box=None))
            continue
        vals = [bnd.findtext(k) for k in ("xmin", "ymin", "xmax", "ymax")]
        if any(v is None for v in vals):
            raise DataError(f"{where}: bndbox needs xmin/ymin/xmax/ymax")
        out.append(Annotation(class_label=name, box=_parse_box(vals, where)))
    return out


def _load_vott_json(path) -> list:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: cannot parse VOTT JSON: {exc}") from exc
    regions = data.get("regions")
    if not isinstance(regions, list):
        raise DataError(f"{path}: expected a top-level 'regions' list")
    out = []
    for i, region in enumerate(regions):
        where = f"{path}: region {i}"
        tags = region.get("tags")
        if not isinstance(tags, list) or not tags or not isinstance(tags[0], str):
            raise DataError(f"{where} needs a non-empty 'tags' list")
        bb = region.get("boundingBox")
        if not isinstance(bb, dict):
            raise DataError(f"{where} has no 'boundingBox'")
        try:
            left, top = float(bb["left"]), float(bb["top"])
            w, h = float(bb["width"]), float(bb["height"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: boundingBox needs numeric "
                            "left/top/width/height") from exc
        out.append(Annotation(class_label=tags[0],
                              box=_parse_box((left, top, left + w, top + h), where)))
    return out


def load_annotations(path, format: str) -> list:
    """Parse an annotation file into Annotations.

    Args:
        path: the annotation file.
        format: 'voc_xml' or 'vott_json'.

    Raises:
        DataError: unknown format, unreadable file, or invalid content —
            the message names the file and offending element.
    """
    if format == "voc_xml":
        return _load_voc_xml(path)
    if format == "vott_json":
        return _load_vott_json(path)
    raise DataError(f"unknown annotation format {format!r}")


def write_voc_xml(path, image_id: str, width: int, height: int,
                  annotations) -> None:
    """Write annotations in the accepted VOC XML dialect."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = f"{image_id}.png"
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = str(width)
    ET.SubElement(size, "height").text = str(height)
    ET.SubElement(size, "depth").text = "1"
    for ann in annotations:
        obj = ET.SubElement(root, "object")
        ET.SubElement(obj, "name").text = ann.class_label
        if ann.box is None:
            continue  # image-level tag: no bndbox element
        bnd = ET.SubElement(obj, "bndbox")
        for key, v in zip(("xmin", "ymin", "xmax", "ymax"), ann.box):
            ET.SubElement(bnd, key).text = f"{v:g}"
    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="unicode")
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("\n")


# ---------------------------------------------------------------------------
# loading samples


def load_sample(entry: ManifestEntry, root) -> Sample:
    """Load one manifest entry: image pixels plus parsed annotations."""
    image_path = os.path.join(root, entry.image_path)
    try:
        with Image.open(image_path) as img:
            pixels = np.asarray(img.convert("L"), dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read image {image_path}: {exc}") from exc
    annotations = []
    if entry.annotation_path is not None:
        ann_path = os.path.join(root, entry.annotation_path)
        annotations = load_annotations(ann_path, entry.format)
        h, w = pixels.shape
        for i, ann in enumerate(annotations):
            if ann.class_label not in CLASS_NAMES[1:]:
                raise DataError(f"{ann_path}: object {i} has unknown class "
                                f"{ann.class_label!r} (expected one of "
                                f"{CLASS_NAMES[1:]})")
            if ann.box is None:
                continue
            x1, y1, x2, y2 = ann.box
            if x1 < 0 or y1 < 0 or x2 > w or y2 > h:
                raise DataError(f"{ann_path}: object {i} box {ann.box} exceeds "
                                f"the {w}x{h} image")
    return Sample(image_id=entry.image_id, pixels=pixels,
                  annotations=annotations, kind=entry.kind)


def load_split(manifest: DatasetManifest, root, split: str | None) -> list:
    """Load all samples of one split (or every sample when split is None)."""
    return [load_sample(e, root) for e in manifest.entries
            if split is None or e.split == split]


# ---------------------------------------------------------------------------
# splitting


def split_dataset(manifest: DatasetManifest, train_fraction: float,
                  rng_seed: int) -> DatasetManifest:
    """Assign train/test splits, stratified by kind.

    Only original images (origin None) are drawn; augmented variants
    inherit their original's split so the two never straddle it. Per
    kind, round(n * train_fraction) originals go to train.
    """
    if not 0.0 < train_fraction < 1.0:
        raise DataError("train_fraction must be in (0, 1)")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    assigned = {}
    for kind in KINDS:
        ids = [e.image_id for e in manifest.entries
               if e.kind == kind and e.origin is None]
        order = rng.permutation(len(ids))
        n_train = round(len(ids) * train_fraction)
        for rank, idx in enumerate(order):
            assigned[ids[idx]] = "train" if rank < n_train else "test"
    entries = []
    for e in manifest.entries:
        key = e.origin if e.origin is not None else e.image_id
        if key not in assigned:
            raise DataError(f"cannot split {e.image_id}: unknown origin {key!r}")
        entries.append(replace(e, split=assigned[key]))
    return DatasetManifest(entries=entries, seed=rng_seed)


# ---------------------------------------------------------------------------
# resizing


def resize_sample(sample: Sample, target: int) -> Sample:
    """Pad to square with zeros, then bilinear-resize to target x target.

    Every box is scaled by the single resulting factor; relative
    geometry is preserved because padding sits on the bottom/right.
    """
    if target < 1:
        raise DataError("resize target must be >= 1")
    h, w = sample.pixels.shape
    side = max(h, w)
    padded = np.zeros((side, side), dtype=np.uint8)
    padded[:h, :w] = sample.pixels
    img = Image.fromarray(padded).resize((target, target), Image.BILINEAR)
    scale = target / side
    annotations = [Annotation(a.class_label,
                              None if a.box is None else
                              tuple(v * scale for v in a.box))
                   for a in sample.annotations]
    return Sample(image_id=sample.image_id,
                  pixels=np.asarray(img, dtype=np.uint8),
                  annotations=annotations, kind=sample.kind)


# ---------------------------------------------------------------------------
# synthetic corpus


def _render_background(rng, s: int) -> np.ndarray:
    base = rng.uniform(55.0, 90.0)
    yy, xx = np.mgrid[0:s, 0:s] / float(s)
    gx = rng.uniform(-18.0, 18.0)
    gy = rng.uniform(-18.0, 18.0)
    return base + gx * xx + gy * yy + rng.normal(0.0, 5.5, size=(s, s))


def _add_bones(img: np.ndarray, rng, s: int) -> None:
    """Add 2-3 bright, slightly tilted vertical ridges."""
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]].astype(np.float64)
    n = int(rng.integers(2, 4))
    for _ in range(n):
        x0 = rng.uniform(0.15 * s, 0.85 * s)
        width = rng.uniform(0.07 * s, 0.13 * s)
        tilt = rng.uniform(-0.2, 0.2)
        gain = rng.uniform(30.0, 55.0)
        center = x0 + tilt * (yy - s / 2.0)
        img += gain * np.exp(-((xx - center) / width) ** 2)


def _add_clutter(img: np.ndarray, rng, s: int) -> None:
    """Non-hand structure for pure negatives: horizontal ridges/blobs."""
    yy, xx = np.mgrid[0:img.shape[0], 0:img.shape[1]].astype(np.float64)
    for _ in range(int(rng.integers(1, 3))):
        y0 = rng.uniform(0.15 * s, 0.85 * s)
        width = rng.uniform(0.08 * s, 0.16 * s)
        gain = rng.uniform(15.0, 35.0)
        img += gain * np.exp(-((yy - y0) / width) ** 2)
    if rng.uniform() < 0.5:
        cx, cy = rng.uniform(0.2 * s, 0.8 * s, size=2)
        r = rng.uniform(0.1 * s, 0.2 * s)
        img += 20.0 * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / r**2))


def _place_lesions(img: np.ndarray, rng, cfg) -> list:
    """Stamp 1..max_lesions bright rectangles; returns their boxes."""
    s = cfg.image_size
    n = int(rng.integers(1, cfg.max_lesions + 1))
    boxes = []
    for _ in range(n):
        for _attempt in range(20):
            w = int(rng.integers(cfg.lesion_min, cfg.lesion_max + 1))
            h = int(rng.integers(cfg.lesion_min, cfg.lesion_max + 1))
            x1 = int(rng.integers(2, s - w - 1))
            y1 = int(rng.integers(2, s - h - 1))
            box = (float(x1), float(y1), float(x1 + w), float(y1 + h))
            if all(_boxes_apart(box, b) for b in boxes):
                break
        else:
            continue
        level = rng.uniform(215.0, 245.0)
        img[y1:y1 + h, x1:x1 + w] = level + rng.normal(0.0, 2.0, size=(h, w))
        boxes.append(box)
    return boxes


def _boxes_apart(a, b) -> bool:
    # overlap extent per axis; negative means a gap.  Lesions must be
    # separated by >= 6 px on at least one axis so they stay visually
    # (and, at feature stride, spatially) distinct.
    ix = min(a[2], b[2]) - max(a[0], b[0])
    iy = min(a[3], b[3]) - max(a[1], b[1])
    return ix <= -6 or iy <= -6


def _finish(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_generate(cfg, rng_seed: int, out_dir) -> DatasetManifest:
    """Generate the synthetic corpus and write images + annotations.

    Three kinds are produced: positives (textured hand-like image with
    bright rectangular lesions and exact boxes), hand negatives (same
    without lesions, one image-spanning hand box), and pure negatives
    (non-hand clutter, no annotations). Everything, placement and
    intensity included, derives from rng_seed.

    Returns the manifest, which is also written to out_dir/manifest.json.
    """
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    s = cfg.image_size
    img_dir = os.path.join(out_dir, "images")
    ann_dir = os.path.join(out_dir, "annotations")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(ann_dir, exist_ok=True)

    plan = ([(KIND_POSITIVE, i) for i in range(cfg.num_positive)]
            + [(KIND_HAND, i) for i in range(cfg.num_hand_negative)]
            + [(KIND_PURE, i) for i in range(cfg.num_pure_negative)])
    short = {KIND_POSITIVE: "pos", KIND_HAND: "hand", KIND_PURE: "neg"}
    entries = []
    for kind, i in plan:
        image_id = f"synth_{short[kind]}_{i:03d}"
        img = _render_background(rng, s)
        annotations = []
        if kind in (KIND_POSITIVE, KIND_HAND):
            _add_bones(img, rng, s)
            if kind == KIND_POSITIVE:
                boxes = _place_lesions(img, rng, cfg)
                annotations = [Annotation(CLASS_FRACTURE, b) for b in boxes]
            else:
                # hands without lesions carry an image-level tag, no box
                annotations = [Annotation(CLASS_HAND, None)]
        else:
            _add_clutter(img, rng, s)
        pixels = _finish(img)

        image_rel = os.path.join("images", f"{image_id}.png")
        ann_rel = os.path.join("annotations", f"{image_id}.xml")
        Image.fromarray(pixels).save(os.path.join(out_dir, image_rel))
        write_voc_xml(os.path.join(out_dir, ann_rel), image_id, s, s, annotations)
        entries.append(ManifestEntry(
            image_id=image_id, image_path=image_rel, annotation_path=ann_rel,
            format="voc_xml", kind=kind))

    manifest = DatasetManifest(entries=entries, seed=rng_seed)
    manifest.save(os.path.join(out_dir, MANIFEST_NAME))
    return manifest
