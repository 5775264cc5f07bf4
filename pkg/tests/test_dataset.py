"""Dataset layer tests: manifest handling, annotation formats, split
assignment, resizing, and the synthetic corpus generator."""

import json

import numpy as np
import pytest
from PIL import Image

from fracdet import dataset as D
from fracdet.config import SynthConfig
from fracdet.errors import DataError


def entry_dict(image_id="img_000", **over):
    row = {"image_id": image_id, "image_path": f"images/{image_id}.png",
           "annotation_path": f"annotations/{image_id}.xml",
           "format": "voc_xml", "kind": "positive",
           "split": None, "origin": None}
    row.update(over)
    return row


def manifest_dict(rows):
    return {"schema_version": 1, "seed": 42, "entries": rows}


def test_manifest_roundtrip_is_lossless(tmp_path):
    rows = [entry_dict("a", split="train"),
            entry_dict("b", kind="pure_negative", annotation_path=None,
                       split="test"),
            entry_dict("a_aug1", origin="a", split="train")]
    manifest = D.DatasetManifest.from_dict(manifest_dict(rows))
    path = tmp_path / "manifest.json"
    manifest.save(path)
    again = D.DatasetManifest.load(path)
    assert again == manifest
    assert again.to_dict() == manifest.to_dict()
    assert again.seed == 42


@pytest.mark.parametrize("mangle, fragment", [
    (lambda d: d.update(schema_version=99), "schema_version"),
    (lambda d: d.update(seed="seven"), "seed"),
    (lambda d: d.update(entries="nope"), "entries must be a list"),
    (lambda d: d["entries"].append("nope"), r"entries\[2\] must be an object"),
    (lambda d: d["entries"][1].update(image_id="a"), "duplicate image_id"),
    (lambda d: d["entries"][0].update(kind="negative"), "unknown kind"),
    (lambda d: d["entries"][0].update(format="coco"), "unknown format"),
    (lambda d: d["entries"][0].update(split="val"), "split"),
    (lambda d: d["entries"][0].update(image_id=""), "image_id"),
    (lambda d: d["entries"][1].update(origin="ghost"), "missing origin"),
])
def test_manifest_rejects_bad_rows(mangle, fragment):
    data = manifest_dict([entry_dict("a"), entry_dict("b")])
    mangle(data)
    with pytest.raises(DataError, match=fragment):
        D.DatasetManifest.from_dict(data)


def test_manifest_load_errors_name_the_file(tmp_path):
    missing = tmp_path / "nothing.json"
    with pytest.raises(DataError, match="nothing.json"):
        D.DatasetManifest.load(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DataError, match="not valid JSON"):
        D.DatasetManifest.load(bad)


def test_voc_xml_roundtrip(tmp_path):
    path = tmp_path / "img.xml"
    anns = [D.Annotation("fracture", (3.0, 4.5, 20.0, 18.0)),
            D.Annotation("hand_no_fracture", None),
            D.Annotation("fracture", (30.0, 30.0, 40.0, 44.0))]
    D.write_voc_xml(path, "img", 96, 96, anns)
    assert D.load_annotations(path, "voc_xml") == anns


@pytest.mark.parametrize("body, fragment", [
    ("<annotation><object></object></annotation>", "no <name>"),
    ("<annotation><object><name>fracture</name>"
     "<bndbox><xmin>1</xmin><ymin>2</ymin><xmax>9</xmax></bndbox>"
     "</object></annotation>", "xmin/ymin/xmax/ymax"),
    ("<annotation><object><name>fracture</name>"
     "<bndbox><xmin>9</xmin><ymin>2</ymin><xmax>9</xmax><ymax>8</ymax></bndbox>"
     "</object></annotation>", "degenerate box"),
    ("<annotation><object><name>fracture</name>"
     "<bndbox><xmin>a</xmin><ymin>2</ymin><xmax>9</xmax><ymax>8</ymax></bndbox>"
     "</object></annotation>", "numeric"),
    ("<annotation><object>", "malformed XML"),
])
def test_voc_xml_rejects_bad_content(tmp_path, body, fragment):
    path = tmp_path / "bad.xml"
    path.write_text(body)
    with pytest.raises(DataError, match=fragment):
        D.load_annotations(path, "voc_xml")


def test_vott_json_parses_regions(tmp_path):
    path = tmp_path / "img.json"
    path.write_text(json.dumps({"regions": [
        {"tags": ["fracture"],
         "boundingBox": {"left": 10, "top": 20, "width": 15, "height": 5}},
    ]}))
    got = D.load_annotations(path, "vott_json")
    assert got == [D.Annotation("fracture", (10.0, 20.0, 25.0, 25.0))]


@pytest.mark.parametrize("body, fragment", [
    ('{"no_regions": []}', "'regions' list"),
    ('{"regions": [{"tags": [], "boundingBox": {}}]}', "tags"),
    ('{"regions": [{"tags": ["fracture"]}]}', "boundingBox"),
    ('{"regions": [{"tags": ["fracture"], "boundingBox": {"left": "x", '
     '"top": 1, "width": 2, "height": 3}}]}', "numeric"),
    ("{broken", "cannot parse"),
])
def test_vott_json_rejects_bad_content(tmp_path, body, fragment):
    path = tmp_path / "bad.json"
    path.write_text(body)
    with pytest.raises(DataError, match=fragment):
        D.load_annotations(path, "vott_json")


def test_unknown_annotation_format():
    with pytest.raises(DataError, match="unknown annotation format"):
        D.load_annotations("whatever.txt", "coco")


def write_png(path, pixels):
    Image.fromarray(pixels).save(path)


def make_entry(tmp_path, anns, image_hw=(40, 60), image_id="img"):
    (tmp_path / "images").mkdir(exist_ok=True)
    (tmp_path / "annotations").mkdir(exist_ok=True)
    pixels = np.zeros(image_hw, dtype=np.uint8)
    write_png(tmp_path / "images" / f"{image_id}.png", pixels)
    D.write_voc_xml(tmp_path / "annotations" / f"{image_id}.xml",
                    image_id, image_hw[1], image_hw[0], anns)
    return D.ManifestEntry(image_id=image_id,
                           image_path=f"images/{image_id}.png",
                           annotation_path=f"annotations/{image_id}.xml",
                           format="voc_xml", kind="positive")


def test_load_sample_reads_pixels_and_annotations(tmp_path):
    anns = [D.Annotation("fracture", (5.0, 5.0, 20.0, 30.0))]
    entry = make_entry(tmp_path, anns)
    sample = D.load_sample(entry, tmp_path)
    assert sample.pixels.shape == (40, 60)
    assert sample.annotations == anns
    assert sample.has_fracture()
    boxes, classes = sample.boxed_targets()
    assert boxes.shape == (1, 4) and classes.tolist() == [1]


def test_load_sample_rejects_unknown_class_and_oob_box(tmp_path):
    entry = make_entry(tmp_path, [D.Annotation("femur", (1, 1, 5, 5))])
    with pytest.raises(DataError, match="unknown class"):
        D.load_sample(entry, tmp_path)
    entry = make_entry(tmp_path, [D.Annotation("fracture", (1, 1, 70, 30))],
                       image_id="oob")
    with pytest.raises(DataError, match="exceeds"):
        D.load_sample(entry, tmp_path)


def test_load_sample_missing_image(tmp_path):
    entry = D.ManifestEntry(image_id="ghost", image_path="images/ghost.png",
                            annotation_path=None, format="voc_xml",
                            kind="pure_negative")
    with pytest.raises(DataError, match="ghost.png"):
        D.load_sample(entry, tmp_path)


def test_boxed_targets_skip_image_level_tags(tmp_path):
    anns = [D.Annotation("hand_no_fracture", None),
            D.Annotation("fracture", (5.0, 5.0, 20.0, 30.0))]
    entry = make_entry(tmp_path, anns)
    sample = D.load_sample(entry, tmp_path)
    boxes, classes = sample.boxed_targets()
    assert len(boxes) == 1 and classes.tolist() == [1]
    assert not D.Sample("x", np.zeros((8, 8), np.uint8),
                        [D.Annotation("hand_no_fracture", None)],
                        "hand_negative").has_fracture()


def split_manifest():
    entries = []
    for kind, n in (("positive", 10), ("hand_negative", 5), ("pure_negative", 4)):
        for i in range(n):
            entries.append(D.ManifestEntry(
                image_id=f"{kind}_{i}", image_path=f"i/{kind}_{i}.png",
                annotation_path=None, format="voc_xml", kind=kind))
    entries.append(D.ManifestEntry(
        image_id="positive_0_aug1", image_path="i/a.png", annotation_path=None,
        format="voc_xml", kind="positive", origin="positive_0"))
    return D.DatasetManifest(entries=entries)


def test_split_is_stratified_by_kind():
    out = D.split_dataset(split_manifest(), 0.8, rng_seed=3)
    for kind, n, want_train in (("positive", 10, 8), ("hand_negative", 5, 4),
                                ("pure_negative", 4, 3)):
        train = [e for e in out.entries
                 if e.kind == kind and e.origin is None and e.split == "train"]
        assert len(train) == want_train, kind
    assert all(e.split in D.SPLITS for e in out.entries)


def test_variants_inherit_their_origins_split():
    out = D.split_dataset(split_manifest(), 0.8, rng_seed=3)
    by_id = {e.image_id: e for e in out.entries}
    assert by_id["positive_0_aug1"].split == by_id["positive_0"].split


def test_split_deterministic_and_seed_sensitive():
    a = D.split_dataset(split_manifest(), 0.8, rng_seed=5)
    b = D.split_dataset(split_manifest(), 0.8, rng_seed=5)
    assert a == b
    seen = {tuple(e.split for e in D.split_dataset(split_manifest(), 0.8, s).entries)
            for s in range(8)}
    assert len(seen) > 1


def test_split_rejects_bad_fraction():
    for f in (0.0, 1.0, -0.5):
        with pytest.raises(DataError):
            D.split_dataset(split_manifest(), f, rng_seed=0)


def test_resize_scales_boxes_with_padding():
    pixels = np.zeros((50, 100), dtype=np.uint8)
    pixels[10:20, 30:60] = 200
    sample = D.Sample("x", pixels,
                      [D.Annotation("fracture", (30.0, 10.0, 60.0, 20.0)),
                       D.Annotation("hand_no_fracture", None)], "positive")
    out = D.resize_sample(sample, 50)
    # padded to 100x100 then halved
    assert out.pixels.shape == (50, 50)
    assert out.annotations[0].box == pytest.approx((15.0, 5.0, 30.0, 10.0))
    assert out.annotations[1].box is None
    with pytest.raises(DataError):
        D.resize_sample(sample, 0)


def test_resize_to_own_side_is_identity():
    rng = np.random.default_rng(2)
    pixels = rng.integers(0, 255, size=(64, 64), dtype=np.uint8)
    sample = D.Sample("x", pixels, [D.Annotation("fracture", (4, 4, 30, 30))],
                      "positive")
    out = D.resize_sample(sample, 64)
    assert np.array_equal(out.pixels, pixels)
    assert out.annotations[0].box == pytest.approx((4, 4, 30, 30))


def small_synth():
    return SynthConfig(num_positive=8, num_hand_negative=4, num_pure_negative=3,
                       image_size=96)


def test_synth_generates_declared_corpus(tmp_path):
    manifest = D.synth_generate(small_synth(), 11, tmp_path)
    kinds = [e.kind for e in manifest.entries]
    assert kinds.count("positive") == 8
    assert kinds.count("hand_negative") == 4
    assert kinds.count("pure_negative") == 3
    assert (tmp_path / "manifest.json").exists()
    for e in manifest.entries:
        sample = D.load_sample(e, tmp_path)
        assert sample.pixels.shape == (96, 96)
        if e.kind == "positive":
            assert 1 <= len(sample.fracture_boxes()) <= 2
        elif e.kind == "hand_negative":
            assert sample.annotations == [D.Annotation("hand_no_fracture", None)]
        else:
            assert sample.annotations == []


def test_synth_lesions_are_bright_and_separated(tmp_path):
    for seed in (0, 1, 2):
        out = tmp_path / str(seed)
        manifest = D.synth_generate(small_synth(), seed, out)
        for e in manifest.entries:
            if e.kind != "positive":
                continue
            sample = D.load_sample(e, out)
            boxes = sample.fracture_boxes()
            inside = np.zeros(sample.pixels.shape, dtype=bool)
            for x1, y1, x2, y2 in boxes.astype(int):
                inside[y1:y2, x1:x2] = True
            assert sample.pixels[inside].mean() > sample.pixels[~inside].mean() + 80
            for i in range(len(boxes)):
                for j in range(i + 1, len(boxes)):
                    a, b = boxes[i], boxes[j]
                    gap_x = max(a[0], b[0]) - min(a[2], b[2])
                    gap_y = max(a[1], b[1]) - min(a[3], b[3])
                    assert max(gap_x, gap_y) >= 6.0


def test_synth_is_deterministic(tmp_path):
    m1 = D.synth_generate(small_synth(), 123, tmp_path / "a")
    m2 = D.synth_generate(small_synth(), 123, tmp_path / "b")
    assert [e.image_id for e in m1.entries] == [e.image_id for e in m2.entries]
    for e in m1.entries:
        p1 = (tmp_path / "a" / e.image_path).read_bytes()
        p2 = (tmp_path / "b" / e.image_path).read_bytes()
        assert p1 == p2, e.image_id
        a1 = (tmp_path / "a" / e.annotation_path).read_text()
        a2 = (tmp_path / "b" / e.annotation_path).read_text()
        assert a1 == a2, e.image_id


def test_synth_seeds_differ(tmp_path):
    m1 = D.synth_generate(small_synth(), 0, tmp_path / "a")
    D.synth_generate(small_synth(), 1, tmp_path / "b")
    first = m1.entries[0]
    assert ((tmp_path / "a" / first.image_path).read_bytes()
            != (tmp_path / "b" / first.image_path).read_bytes())


def test_load_split_filters(tmp_path):
    manifest = D.synth_generate(small_synth(), 7, tmp_path)
    manifest = D.split_dataset(manifest, 0.75, rng_seed=7)
    train = D.load_split(manifest, tmp_path, "train")
    test = D.load_split(manifest, tmp_path, "test")
    everything = D.load_split(manifest, tmp_path, None)
    assert len(train) + len(test) == len(everything) == 15
