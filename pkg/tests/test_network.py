"""Network construction, forward shapes, and checkpoint format tests."""

import numpy as np
import pytest

from fracdet.anchors import AnchorSpec, generate_anchors
from fracdet.errors import ConfigError, DataError, GeometryError, StructuralError
from fracdet.nanonet import network as N
from fracdet.nanonet.tensor import Tensor


def small_arch(**over):
    arch = {"conv_channels": (4, 8), "conv_strides": (1, 1), "pool_after": (0, 1),
            "rpn_channels": 8, "head_hidden": 16, "roi_grid": 2,
            "num_classes": 3, "anchors_per_cell": 3}
    arch.update(over)
    return arch


def test_total_stride():
    assert N.total_stride(N.DEFAULT_ARCH) == 8
    assert N.total_stride(small_arch()) == 4
    assert N.total_stride({"conv_strides": (2, 2), "pool_after": ()}) == 4


def test_padded_size():
    assert N.padded_size(96, 96, 8) == (96, 96)
    assert N.padded_size(50, 97, 8) == (56, 104)
    assert N.padded_size(1, 1, 8) == (8, 8)


def test_init_is_deterministic_per_seed():
    a = N.init_params(rng_seed=3)
    b = N.init_params(rng_seed=3)
    c = N.init_params(rng_seed=4)
    assert set(a.params) == set(b.params) == set(c.params)
    for name in a.params:
        assert np.array_equal(a[name].data, b[name].data), name
    assert any(not np.array_equal(a[name].data, c[name].data)
               for name in a.params)


def test_init_biases_zero_and_weights_scaled():
    net = N.init_params(rng_seed=0)
    for name, t in net.items():
        if name.endswith(".b"):
            assert not t.data.any(), name
    # he scheme: conv1 fan-in is 9, so std should sit near sqrt(2/9)
    w = net["conv1.w"].data
    assert w.std() == pytest.approx(np.sqrt(2 / 9), rel=0.35)

    fixed = N.init_params({"init_scheme": "gaussian", "init_sigma": 0.05},
                          rng_seed=0)
    assert fixed["head_fc1.w"].data.std() == pytest.approx(0.05, rel=0.1)


def test_init_rejects_bad_arch():
    with pytest.raises(ConfigError, match="init scheme"):
        N.init_params({"init_scheme": "xavier"})
    with pytest.raises(ConfigError, match="equal length"):
        N.init_params({"conv_channels": (8, 8), "conv_strides": (1,)})
    with pytest.raises(ConfigError, match="rpn_channels"):
        N.init_params(small_arch(rpn_channels=5))
    with pytest.raises(ConfigError, match="positive"):
        N.init_params(small_arch(conv_channels=(0, 8)))


def test_params_copy_is_deep():
    net = N.init_params(small_arch(), rng_seed=1)
    dup = net.copy()
    dup["conv1.w"].data += 1.0
    assert not np.array_equal(dup["conv1.w"].data, net["conv1.w"].data)
    assert dup.arch == net.arch


def test_backbone_output_shape_and_padding():
    net = N.init_params(rng_seed=0)
    rng = np.random.default_rng(0)
    feats = N.backbone_forward(rng.uniform(size=(96, 96)), net)
    assert feats.data.shape == (32, 12, 12)
    # a 50x97 image pads up to 56x104 and maps to 7x13 cells
    feats = N.backbone_forward(rng.uniform(size=(50, 97)), net)
    assert feats.data.shape == (32, 7, 13)
    assert np.isfinite(feats.data).all()
    # trailing singleton channel axis is accepted
    feats = N.backbone_forward(rng.uniform(size=(32, 32, 1)), net)
    assert feats.data.shape == (32, 4, 4)
    with pytest.raises(StructuralError, match="single-channel"):
        N.backbone_forward(rng.uniform(size=(32, 32, 3)), net)


def test_backbone_is_deterministic():
    net = N.init_params(rng_seed=5)
    image = np.random.default_rng(5).uniform(size=(48, 48))
    a = N.backbone_forward(image, net)
    b = N.backbone_forward(image, net)
    assert np.array_equal(a.data, b.data)


def test_rpn_rows_align_with_anchor_grid():
    net = N.init_params(small_arch(), rng_seed=2)
    image = np.random.default_rng(2).uniform(size=(40, 40))
    feats = N.backbone_forward(image, net)
    probs, deltas = N.rpn_forward(feats, net)
    hf, wf = feats.data.shape[1:]
    spec = AnchorSpec(scales=(8.0, 16.0, 24.0), ratios=(1.0,), stride=4)
    anchors = generate_anchors(wf, hf, spec)
    assert probs.data.shape == (len(anchors), 2)
    assert deltas.data.shape == (len(anchors), 4)
    assert np.allclose(probs.data.sum(axis=1), 1.0)
    assert (probs.data > 0).all() and (probs.data < 1).all()


def test_rpn_rejects_mismatched_features():
    net = N.init_params(small_arch(), rng_seed=2)
    with pytest.raises(StructuralError, match="feature channels"):
        N.rpn_forward(Tensor(np.zeros((5, 4, 4))), net)


def test_roi_bin_ranges_partition_full_image():
    ys, ye, xs, xe = N.roi_bin_ranges((0, 0, 96, 96), 8, 12, 12, 4)
    assert xs.tolist() == [0, 3, 6, 9] and xe.tolist() == [3, 6, 9, 12]
    assert ys.tolist() == [0, 3, 6, 9] and ye.tolist() == [3, 6, 9, 12]
    with pytest.raises(GeometryError, match="zero-area"):
        N.roi_bin_ranges((10, 10, 10, 20), 8, 12, 12, 4)


def test_roi_pool_constant_and_peak():
    feats = Tensor(np.full((2, 8, 8), 3.5))
    out = N.roi_pool(feats, (0, 0, 32, 32), grid=2, stride=4)
    assert out.data.shape == (2, 2, 2)
    assert (out.data == 3.5).all()

    data = np.zeros((1, 8, 8))
    data[0, 1, 6] = 9.0  # upper-right quadrant of the region
    out = N.roi_pool(Tensor(data), (0, 0, 32, 32), grid=2, stride=4)
    assert out.data[0, 0, 1] == 9.0
    assert out.data[0, 0, 0] == 0.0


def test_roi_pool_outside_map_yields_zeros():
    feats = Tensor(np.ones((1, 8, 8)))
    out = N.roi_pool(feats, (100, 100, 120, 120), grid=2, stride=4)
    assert (out.data == 0.0).all()
    with pytest.raises(ConfigError):
        N.roi_pool(feats, (0, 0, 8, 8), grid=0, stride=4)


def test_detect_forward_shapes():
    net = N.init_params(small_arch(), rng_seed=3)
    image = np.random.default_rng(3).uniform(size=(40, 40))
    feats = N.backbone_forward(image, net)
    proposals = [(0, 0, 20, 20), (8, 8, 36, 28), (2, 30, 14, 39)]
    probs, deltas = N.detect_forward(feats, proposals, net, stride=4)
    assert probs.data.shape == (3, 3)
    assert deltas.data.shape == (3, 3, 4)
    assert np.allclose(probs.data.sum(axis=1), 1.0)

    probs, deltas = N.detect_forward(feats, [], net, stride=4)
    assert probs.data.shape == (0, 3) and deltas.data.shape == (0, 3, 4)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = N.init_params(rng_seed=11)
    path = tmp_path / "net.frdt"
    N.save_checkpoint(net, path)
    loaded = N.load_checkpoint(path)
    assert loaded.arch == net.arch
    assert set(loaded.params) == set(net.params)
    for name in net.params:
        assert np.array_equal(loaded[name].data, net[name].data), name
    # resaving a loaded checkpoint reproduces the file byte for byte
    again = tmp_path / "net2.frdt"
    N.save_checkpoint(loaded, again)
    assert path.read_bytes() == again.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    net = N.init_params(small_arch(), rng_seed=0)
    path = tmp_path / "net.frdt"
    N.save_checkpoint(net, path)
    blob = path.read_bytes()

    bad_magic = tmp_path / "magic.frdt"
    bad_magic.write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(DataError, match="not a checkpoint"):
        N.load_checkpoint(bad_magic)

    bad_version = tmp_path / "version.frdt"
    bad_version.write_bytes(blob[:4] + b"\x63\x00\x00\x00" + blob[8:])
    with pytest.raises(DataError, match="version"):
        N.load_checkpoint(bad_version)

    truncated = tmp_path / "short.frdt"
    truncated.write_bytes(blob[:-16])
    with pytest.raises(DataError, match="truncated"):
        N.load_checkpoint(truncated)

    padded = tmp_path / "long.frdt"
    padded.write_bytes(blob + b"\x00")
    with pytest.raises(DataError, match="trailing"):
        N.load_checkpoint(padded)
