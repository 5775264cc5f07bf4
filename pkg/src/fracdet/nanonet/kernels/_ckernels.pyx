# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the NumPy kernels (see numpy_kernels.py for the
contracts). Direct loops over channel-first float64 arrays; single
threaded, so results are bit-reproducible run to run.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(double[:, :, ::1] x, double[:, :, :, ::1] w,
                   double[::1] b, int stride, int pad):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - kw) // stride + 1
    out_arr = np.empty((cout, ho, wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t co, ci, ky, kx, oy, ox, iy, ix, oy0, oy1, ox0, ox1
    cdef double wv, bv

    with nogil:
        for co in range(cout):
            bv = b[co]
            for oy in range(ho):
                for ox in range(wo):
                    out[co, oy, ox] = bv
            for ci in range(cin):
                for ky in range(kh):
                    # output rows whose tap (ky, kx) lands inside the input
                    oy0 = 0
                    while oy0 * stride - pad + ky < 0:
                        oy0 += 1
                    oy1 = ho
                    while oy1 > oy0 and (oy1 - 1) * stride - pad + ky >= h:
                        oy1 -= 1
                    for kx in range(kw):
                        ox0 = 0
                        while ox0 * stride - pad + kx < 0:
                            ox0 += 1
                        ox1 = wo
                        while ox1 > ox0 and (ox1 - 1) * stride - pad + kx >= wd:
                            ox1 -= 1
                        wv = w[co, ci, ky, kx]
                        for oy in range(oy0, oy1):
                            iy = oy * stride - pad + ky
                            for ox in range(ox0, ox1):
                                ix = ox * stride - pad + kx
                                out[co, oy, ox] += wv * x[ci, iy, ix]
    return out_arr


def conv2d_backward(double[:, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, ::1] grad_out, int stride, int pad):
    cdef Py_ssize_t cin = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = grad_out.shape[1], wo = grad_out.shape[2]
    dx_arr = np.zeros((cin, h, wd), dtype=np.float64)
    dw_arr = np.zeros((cout, cin, kh, kw), dtype=np.float64)
    db_arr = np.zeros(cout, dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, :, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef Py_ssize_t co, ci, ky, kx, oy, ox, iy, ix, oy0, oy1, ox0, ox1
    cdef double g, wv, acc

    with nogil:
        for co in range(cout):
            acc = 0.0
            for oy in range(ho):
                for ox in range(wo):
                    acc += grad_out[co, oy, ox]
            db[co] = acc
            for ci in range(cin):
                for ky in range(kh):
                    oy0 = 0
                    while oy0 * stride - pad + ky < 0:
                        oy0 += 1
                    oy1 = ho
                    while oy1 > oy0 and (oy1 - 1) * stride - pad + ky >= h:
                        oy1 -= 1
                    for kx in range(kw):
                        ox0 = 0
                        while ox0 * stride - pad + kx < 0:
                            ox0 += 1
                        ox1 = wo
                        while ox1 > ox0 and (ox1 - 1) * stride - pad + kx >= wd:
                            ox1 -= 1
                        wv = w[co, ci, ky, kx]
                        acc = 0.0
                        for oy in range(oy0, oy1):
                            iy = oy * stride - pad + ky
                            for ox in range(ox0, ox1):
                                ix = ox * stride - pad + kx
                                g = grad_out[co, oy, ox]
                                acc += g * x[ci, iy, ix]
                                dx[ci, iy, ix] += g * wv
                        dw[co, ci, ky, kx] = acc
    return dx_arr, dw_arr, db_arr


def maxpool2x2_forward(double[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ho = h // 2, wo = w // 2
    out_arr = np.empty((c, ho, wo), dtype=np.float64)
    arg_arr = np.empty((c, ho, wo), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef long long[:, :, ::1] argmax = arg_arr
    cdef Py_ssize_t ci, oy, ox, dy, dxi, iy, ix, best_i
    cdef double best, v

    with nogil:
        for ci in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    best = x[ci, 2 * oy, 2 * ox]
                    best_i = (2 * oy) * w + 2 * ox
                    for dy in range(2):
                        iy = 2 * oy + dy
                        for dxi in range(2):
                            ix = 2 * ox + dxi
                            v = x[ci, iy, ix]
                            if v > best:
                                best = v
                                best_i = iy * w + ix
                    out[ci, oy, ox] = best
                    argmax[ci, oy, ox] = best_i
    return out_arr, arg_arr


def roi_pool_forward(double[:, :, ::1] feat, long long[::1] ys, long long[::1] ye,
                     long long[::1] xs, long long[::1] xe):
    cdef Py_ssize_t c = feat.shape[0], h = feat.shape[1], w = feat.shape[2]
    cdef Py_ssize_t g = ys.shape[0]
    out_arr = np.zeros((c, g, g), dtype=np.float64)
    arg_arr = np.full((c, g, g), -1, dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef long long[:, :, ::1] argmax = arg_arr
    cdef Py_ssize_t ci, by, bx, iy, ix, best_i
    cdef double best, v

    with nogil:
        for by in range(g):
            if ye[by] <= ys[by]:
                continue
            for bx in range(g):
                if xe[bx] <= xs[bx]:
                    continue
                for ci in range(c):
                    best = feat[ci, ys[by], xs[bx]]
                    best_i = ys[by] * w + xs[bx]
                    for iy in range(ys[by], ye[by]):
                        for ix in range(xs[bx], xe[bx]):
                            v = feat[ci, iy, ix]
                            if v > best:
                                best = v
                                best_i = iy * w + ix
                    out[ci, by, bx] = best
                    argmax[ci, by, bx] = best_i
    return out_arr, arg_arr
