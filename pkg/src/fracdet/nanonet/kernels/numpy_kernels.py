"""NumPy implementations of the hot numeric kernels.

This is the fallback backend used when the compiled extension is not
available; both backends implement identical math on float64 arrays laid
out channel-first (C, H, W). Convolution uses im2col plus one matmul;
the compiled backend uses direct loops, so results may differ only by
float rounding of summation order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _conv_cols(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """im2col: ((Ho*Wo, Cin*kh*kw) patch matrix, Ho, Wo) for a (Cin, H, W) input."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cin, ho, wo = win.shape[:3]
    return win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, cin * kh * kw), ho, wo


def conv2d_forward(x, w, b, stride, pad):
    """2-D cross-correlation with zero padding.

    Args:
        x: (Cin, H, W) input.
        w: (Cout, Cin, kh, kw) kernels.
        b: (Cout,) bias.
    Returns:
        (Cout, Ho, Wo) output, Ho = (H + 2*pad - kh)//stride + 1.
    """
    cout, cin, kh, kw = w.shape
    cols, ho, wo = _conv_cols(x, kh, kw, stride, pad)
    out = cols @ w.reshape(cout, cin * kh * kw).T + b
    return np.ascontiguousarray(out.reshape(ho, wo, cout).transpose(2, 0, 1))


def conv2d_backward(x, w, grad_out, stride, pad):
    """Gradients of conv2d_forward w.r.t. input, kernels and bias."""
    cout, cin, kh, kw = w.shape
    _, h, wdt = x.shape
    ho, wo = grad_out.shape[1:]
    gmat = grad_out.transpose(1, 2, 0).reshape(ho * wo, cout)

    cols, _, _ = _conv_cols(x, kh, kw, stride, pad)
    dw = (gmat.T @ cols).reshape(cout, cin, kh, kw)
    db = grad_out.sum(axis=(1, 2))

    dcols = gmat @ w.reshape(cout, cin * kh * kw)
    dcols = dcols.reshape(ho, wo, cin, kh, kw).transpose(2, 3, 4, 0, 1)
    dxp = np.zeros((cin, h + 2 * pad, wdt + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
    dx = dxp[:, pad:pad + h, pad:pad + wdt] if pad else dxp
    return np.ascontiguousarray(dx), dw, db


def maxpool2x2_forward(x):
    """2x2/stride-2 max pooling.

    Returns the pooled (C, H/2, W/2) array plus int64 flat indices (into
    H*W) of the argmax cell per window; ties resolve to the first maximum
    in row-major window order.
    """
    c, h, w = x.shape
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(
        c, h // 2, w // 2, 4)
    am = win.argmax(axis=3)
    out = np.take_along_axis(win, am[..., None], axis=3)[..., 0]
    hy, wx = np.meshgrid(np.arange(h // 2), np.arange(w // 2), indexing="ij")
    argmax = (2 * hy + am // 2) * w + (2 * wx + am % 2)
    return np.ascontiguousarray(out), argmax.astype(np.int64)


def roi_pool_forward(feat, ys, ye, xs, xe):
    """Max-pool a region into a fixed grid given per-bin cell ranges.

    Args:
        feat: (C, H, W) feature map.
        ys, ye: (G,) inclusive start / exclusive end rows per grid row.
        xs, xe: (G,) same for columns.
    Returns:
        (C, G, G) pooled values (empty bins are 0) and (C, G, G) int64
        flat argmax indices into H*W (-1 for empty bins).
    """
    c, h, w = feat.shape
    g = len(ys)
    out = np.zeros((c, g, g))
    argmax = np.full((c, g, g), -1, dtype=np.int64)
    for by in range(g):
        if ye[by] <= ys[by]:
            continue
        for bx in range(g):
            if xe[bx] <= xs[bx]:
                continue
            patch = feat[:, ys[by]:ye[by], xs[bx]:xe[bx]]
            ph, pw = patch.shape[1:]
            flat = patch.reshape(c, ph * pw)
            am = flat.argmax(axis=1)
            out[:, by, bx] = flat[np.arange(c), am]
            argmax[:, by, bx] = (ys[by] + am // pw) * w + (xs[bx] + am % pw)
    return out, argmax
