"""Compute kernels: forward results against independent oracles,
backward results against finite differences, and agreement between the
compiled and NumPy backends."""

import numpy as np
import pytest

from fracdet.nanonet import kernels
from fracdet.nanonet.kernels import numpy_kernels

try:
    from fracdet.nanonet.kernels import _ckernels
except ImportError:
    _ckernels = None

try:
    from scipy import signal
except ImportError:
    signal = None

needs_cython = pytest.mark.skipif(_ckernels is None,
                                  reason="compiled kernels not built")
needs_scipy = pytest.mark.skipif(signal is None, reason="scipy not installed")

BACKENDS = [numpy_kernels] + ([_ckernels] if _ckernels is not None else [])


def conv_ref(x, w, b, stride, pad):
    """Direct six-loop convolution (cross-correlation) oracle."""
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for co in range(cout):
        for oy in range(ho):
            for ox in range(wo):
                patch = xp[:, oy * stride:oy * stride + kh,
                           ox * stride:ox * stride + kw]
                out[co, oy, ox] = np.sum(patch * w[co]) + b[co]
    return out


def rand_conv_case(rng, stride, pad):
    cin = int(rng.integers(1, 4))
    cout = int(rng.integers(1, 5))
    h = int(rng.integers(4, 10))
    w = int(rng.integers(4, 10))
    x = rng.normal(0, 1, (cin, h, w))
    wt = rng.normal(0, 1, (cout, cin, 3, 3))
    b = rng.normal(0, 1, cout)
    return x, wt, b


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
@pytest.mark.parametrize("stride,pad", [(1, 1), (1, 0), (2, 1)])
def test_conv_forward_matches_loop_oracle(backend, stride, pad):
    rng = np.random.Generator(np.random.PCG64(7))
    for _ in range(8):
        x, w, b = rand_conv_case(rng, stride, pad)
        got = np.asarray(backend.conv2d_forward(x, w, b, stride, pad))
        assert np.allclose(got, conv_ref(x, w, b, stride, pad), atol=1e-10)


@needs_scipy
def test_conv_forward_matches_scipy():
    rng = np.random.Generator(np.random.PCG64(13))
    x, w, b = rand_conv_case(rng, 1, 1)
    got = np.asarray(kernels.conv2d_forward(x, w, b, 1, 1))
    for co in range(w.shape[0]):
        want = b[co]
        for ci in range(x.shape[0]):
            want = want + signal.correlate2d(x[ci], w[co, ci], mode="same")
        assert np.allclose(got[co], want, atol=1e-10)


@needs_cython
@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0)])
def test_conv_backends_agree(stride, pad):
    rng = np.random.Generator(np.random.PCG64(19))
    for _ in range(6):
        x, w, b = rand_conv_case(rng, stride, pad)
        fn = np.asarray(numpy_kernels.conv2d_forward(x, w, b, stride, pad))
        fc = np.asarray(_ckernels.conv2d_forward(x, w, b, stride, pad))
        assert np.allclose(fn, fc, atol=1e-12)
        g = rng.normal(0, 1, fn.shape)
        dxn, dwn, dbn = (np.asarray(a) for a in
                         numpy_kernels.conv2d_backward(x, w, g, stride, pad))
        dxc, dwc, dbc = (np.asarray(a) for a in
                         _ckernels.conv2d_backward(x, w, g, stride, pad))
        assert np.allclose(dxn, dxc, atol=1e-12)
        assert np.allclose(dwn, dwc, atol=1e-12)
        assert np.allclose(dbn, dbc, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1)])
def test_conv_backward_matches_finite_differences(backend, stride, pad):
    rng = np.random.Generator(np.random.PCG64(23))
    x, w, b = rand_conv_case(rng, stride, pad)
    g = rng.normal(0, 1, np.asarray(backend.conv2d_forward(x, w, b, stride, pad)).shape)

    def scalar_loss(x_, w_, b_):
        return float(np.sum(np.asarray(backend.conv2d_forward(x_, w_, b_, stride, pad)) * g))

    dx, dw, db = (np.asarray(a) for a in backend.conv2d_backward(x, w, g, stride, pad))
    h = 1e-6
    for arr, grad, name in ((x, dx, "x"), (w, dw, "w"), (b, db, "b")):
        flat = arr.ravel()
        picks = np.random.Generator(np.random.PCG64(29)).choice(
            flat.size, size=min(20, flat.size), replace=False)
        for k in picks:
            orig = flat[k]
            flat[k] = orig + h
            up = scalar_loss(x, w, b)
            flat[k] = orig - h
            down = scalar_loss(x, w, b)
            flat[k] = orig
            fd = (up - down) / (2 * h)
            assert np.isclose(grad.ravel()[k], fd, rtol=1e-5, atol=1e-7), name


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
def test_maxpool_forward_and_ties(backend):
    rng = np.random.Generator(np.random.PCG64(31))
    x = rng.normal(0, 1, (3, 8, 10))
    out, idx = backend.maxpool2x2_forward(x)
    out, idx = np.asarray(out), np.asarray(idx)
    assert out.shape == (3, 4, 5)
    for c in range(3):
        for i in range(4):
            for j in range(5):
                win = x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert out[c, i, j] == win.max()
                assert x[c].ravel()[idx[c, i, j]] == win.max()
    # ties resolve to the first maximum in row-major window order
    tied = np.zeros((1, 2, 2))
    _, ti = backend.maxpool2x2_forward(tied)
    assert np.asarray(ti).ravel()[0] == 0


@needs_cython
def test_maxpool_backends_identical():
    rng = np.random.Generator(np.random.PCG64(37))
    x = rng.normal(0, 1, (4, 12, 6))
    on, idxn = (np.asarray(a) for a in numpy_kernels.maxpool2x2_forward(x))
    oc, idxc = (np.asarray(a) for a in _ckernels.maxpool2x2_forward(x))
    assert np.array_equal(on, oc)
    assert np.array_equal(idxn, idxc)


def test_maxpool_backward_routes_to_argmax():
    rng = np.random.Generator(np.random.PCG64(41))
    x = rng.normal(0, 1, (2, 6, 6))
    out, idx = kernels.maxpool2x2_forward(x)
    g = rng.normal(0, 1, np.asarray(out).shape)
    dx = kernels.maxpool2x2_backward(g, np.asarray(idx), 6, 6)
    assert dx.shape == x.shape
    # every window's gradient lands exactly on its max cell
    for c in range(2):
        for i in range(3):
            for j in range(3):
                win = dx[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                assert np.count_nonzero(win) <= 1
                assert np.isclose(win.sum(), g[c, i, j])


def roi_ref(feat, ys, ye, xs, xe):
    c = feat.shape[0]
    g = len(ys)
    out = np.zeros((c, g, g))
    for ci in range(c):
        for by in range(g):
            for bx in range(g):
                patch = feat[ci, ys[by]:ye[by], xs[bx]:xe[bx]]
                out[ci, by, bx] = patch.max() if patch.size else 0.0
    return out


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.__name__.split(".")[-1])
def test_roi_pool_forward(backend):
    rng = np.random.Generator(np.random.PCG64(43))
    feat = rng.normal(0, 1, (3, 9, 11))
    ys = np.array([0, 2, 4, 6], dtype=np.int64)
    ye = np.array([2, 4, 6, 9], dtype=np.int64)
    xs = np.array([1, 3, 3, 8], dtype=np.int64)
    xe = np.array([3, 3, 8, 11], dtype=np.int64)  # second column is empty
    out, argmax = (np.asarray(a) for a in backend.roi_pool_forward(feat, ys, ye, xs, xe))
    assert np.allclose(out, roi_ref(feat, ys, ye, xs, xe))
    assert np.all(argmax[:, :, 1] == -1)
    valid = argmax >= 0
    flat = feat.reshape(3, -1)
    for c in range(3):
        vals = flat[c][argmax[c][valid[c]]]
        assert np.allclose(np.sort(vals), np.sort(out[c][valid[c]]))


@needs_cython
def test_roi_pool_backends_identical():
    rng = np.random.Generator(np.random.PCG64(47))
    feat = rng.normal(0, 1, (2, 7, 7))
    ys = np.array([0, 1, 3, 5], dtype=np.int64)
    ye = np.array([1, 3, 5, 7], dtype=np.int64)
    on, an = (np.asarray(a) for a in numpy_kernels.roi_pool_forward(feat, ys, ye, ys, ye))
    oc, ac = (np.asarray(a) for a in _ckernels.roi_pool_forward(feat, ys, ye, ys, ye))
    assert np.array_equal(on, oc)
    assert np.array_equal(an, ac)


def test_roi_pool_backward_scatter():
    rng = np.random.Generator(np.random.PCG64(53))
    feat = rng.normal(0, 1, (2, 6, 6))
    ys = np.array([0, 3], dtype=np.int64)
    ye = np.array([3, 6], dtype=np.int64)
    out, argmax = kernels.roi_pool_forward(feat, ys, ye, ys, ye)
    g = rng.normal(0, 1, np.asarray(out).shape)
    dx = kernels.roi_pool_backward(g, np.asarray(argmax), 6, 6)
    assert np.isclose(dx.sum(), g.sum())
    h = 1e-6
    target = np.asarray(argmax)[0, 0, 0]
    feat2 = feat.copy()
    feat2.ravel()[target] += h
    out2, _ = kernels.roi_pool_forward(feat2, ys, ye, ys, ye)
    fd = (np.sum(np.asarray(out2) * g) - np.sum(np.asarray(out) * g)) / h
    assert np.isclose(dx.ravel()[target], fd, rtol=1e-4, atol=1e-8)
