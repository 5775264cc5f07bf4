"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the NumPy
implementations are used. Set ``FRACDET_KERNELS=numpy`` (or ``cython``)
to force a backend; forcing ``cython`` raises if the extension is absent.

Gradient scatter for the pooling ops is a cheap index operation and is
shared by both backends.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_kernels

_forced = os.environ.get("FRACDET_KERNELS", "").strip().lower()

if _forced == "numpy":
    _impl = numpy_kernels
    BACKEND = "numpy"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "FRACDET_KERNELS=cython but the compiled extension is missing; "
                "build it with `python setup.py build_ext --inplace`"
            )
        _impl = numpy_kernels
        BACKEND = "numpy"

conv2d_forward = _impl.conv2d_forward
conv2d_backward = _impl.conv2d_backward
maxpool2x2_forward = _impl.maxpool2x2_forward
roi_pool_forward = _impl.roi_pool_forward


def maxpool2x2_backward(grad_out: np.ndarray, argmax: np.ndarray,
                        h: int, w: int) -> np.ndarray:
    """Route pooled gradients back to their argmax cells."""
    c = grad_out.shape[0]
    dx = np.zeros((c, h * w))
    for ci in range(c):
        np.add.at(dx[ci], argmax[ci].ravel(), grad_out[ci].ravel())
    return dx.reshape(c, h, w)


def roi_pool_backward(grad_out: np.ndarray, argmax: np.ndarray,
                      h: int, w: int) -> np.ndarray:
    """Scatter-add pooled-bin gradients to argmax cells (-1 bins are empty)."""
    c = grad_out.shape[0]
    dx = np.zeros((c, h * w))
    for ci in range(c):
        idx = argmax[ci].ravel()
        valid = idx >= 0
        np.add.at(dx[ci], idx[valid], grad_out[ci].ravel()[valid])
    return dx.reshape(c, h, w)
