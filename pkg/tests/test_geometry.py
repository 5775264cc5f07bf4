"""Box arithmetic: worked examples, properties, and the encode/decode
roundtrip used everywhere downstream."""

import numpy as np
import pytest

from fracdet import geometry
from fracdet.errors import GeometryError


def random_boxes(rng, n, span=100.0, min_side=0.5):
    x1 = rng.uniform(0, span - min_side, n)
    y1 = rng.uniform(0, span - min_side, n)
    w = rng.uniform(min_side, span / 2, n)
    h = rng.uniform(min_side, span / 2, n)
    return np.stack([x1, y1, x1 + w, y1 + h], axis=1)


def test_iou_worked_example():
    # unit squares offset by half a side: inter 0.5, union 1.5
    assert np.isclose(geometry.iou((0, 0, 1, 1), (0.5, 0, 1.5, 1)), 1 / 3)


def test_iou_disjoint_and_identical():
    assert geometry.iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert geometry.iou((1, 2, 4, 6), (1, 2, 4, 6)) == 1.0


def test_iou_touching_edges_is_zero():
    assert geometry.iou((0, 0, 1, 1), (1, 0, 2, 1)) == 0.0


def test_degenerate_boxes():
    # zero-width boxes have zero overlap rather than erroring; ordering
    # violations are rejected outright
    assert geometry.iou((0, 0, 0, 1), (0, 0, 1, 1)) == 0.0
    with pytest.raises(GeometryError):
        geometry.validate_box((3, 1, 2, 4))
    with pytest.raises(GeometryError):
        geometry.encode_delta((0, 0, 10, 10), (5, 5, 5, 9))


def test_encode_worked_example():
    # target shifted right by half an anchor width, twice as wide
    t = geometry.encode_delta((0, 0, 10, 10), (0, 0, 20, 10))
    assert np.allclose(t, (0.5, 0.0, np.log(2.0), 0.0))


def test_decode_worked_example():
    box = geometry.decode_delta((0, 0, 10, 10), (0.5, 0.0, np.log(2.0), 0.0))
    assert np.allclose(box, (0.0, 0.0, 20.0, 10.0))


def test_roundtrip_scalar_many_pairs():
    rng = np.random.Generator(np.random.PCG64(5))
    anchors = random_boxes(rng, 200)
    targets = random_boxes(rng, 200)
    for a, g in zip(anchors, targets):
        back = geometry.decode_delta(a, geometry.encode_delta(a, g))
        assert np.allclose(back, g, atol=1e-9)


def test_roundtrip_vectorized_100k():
    rng = np.random.Generator(np.random.PCG64(17))
    n = 100_000
    anchors = random_boxes(rng, n)
    targets = random_boxes(rng, n)
    back = geometry.decode_many(anchors, geometry.encode_many(anchors, targets))
    assert np.max(np.abs(back - targets)) < 1e-6


def test_iou_matrix_symmetry_and_bounds():
    rng = np.random.Generator(np.random.PCG64(23))
    a = random_boxes(rng, 120)
    b = random_boxes(rng, 80)
    m = geometry.iou_matrix(a, b)
    mt = geometry.iou_matrix(b, a)
    assert np.array_equal(m, mt.T)
    assert np.all(m >= 0.0) and np.all(m <= 1.0)
    assert np.allclose(np.diag(geometry.iou_matrix(a, a)), 1.0)


def test_iou_matrix_matches_scalar():
    rng = np.random.Generator(np.random.PCG64(29))
    a = random_boxes(rng, 25)
    b = random_boxes(rng, 17)
    m = geometry.iou_matrix(a, b)
    for i in range(len(a)):
        for j in range(len(b)):
            assert np.isclose(m[i, j], geometry.iou(a[i], b[j]), atol=1e-12)


def test_decode_rejects_huge_log_deltas():
    with pytest.raises(GeometryError):
        geometry.decode_delta((0, 0, 10, 10), (0, 0, geometry.MAX_LOG_SIZE_DELTA + 1, 0))


def test_decode_many_clamps_when_asked():
    anchors = np.array([[0.0, 0.0, 10.0, 10.0]])
    wild = np.array([[0.0, 0.0, 50.0, -50.0]])
    out = geometry.decode_many(anchors, wild, clamp=True)
    capped = geometry.decode_many(
        anchors, np.array([[0.0, 0.0, geometry.MAX_LOG_SIZE_DELTA,
                            -geometry.MAX_LOG_SIZE_DELTA]]))
    assert np.allclose(out, capped)
    with pytest.raises(GeometryError):
        geometry.decode_many(anchors, wild)


def test_clip_box():
    assert geometry.clip_box((-5, -2, 30, 12), 20, 10) == (0, 0, 20, 10)
    assert geometry.clip_box((1, 2, 3, 4), 20, 10) == (1, 2, 3, 4)


def test_clip_many_matches_scalar():
    rng = np.random.Generator(np.random.PCG64(31))
    boxes = random_boxes(rng, 50, span=120.0) - 10.0
    clipped = geometry.clip_many(boxes, 100.0, 90.0)
    for raw, got in zip(boxes, clipped):
        assert np.allclose(got, geometry.clip_box(tuple(raw), 100.0, 90.0))


def test_area():
    assert geometry.area((1, 1, 4, 5)) == 12.0
