# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: window unfold/fold and a direct-loop convolution.

Column layout is point-major: cols[b, oh, ow, (i*kw + j)*C + c] so that a
window reads as the concatenation of its kh*kw pixels, each contributing C
channels. Out-of-bounds taps read as zero (fold scatters them nowhere).
"""

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double


def unfold(real[:, :, :, ::1] x, int kh, int kw, int sh, int sw, int ph, int pw):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t OH = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - kw) // sw + 1
    cdef Py_ssize_t n = kh * kw * C
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((B, OH, OW, n), dtype=dtype)
    cdef real[:, :, :, ::1] cols = out_arr
    cdef Py_ssize_t b, oh, ow, i, j, c, hi, wj
    for b in range(B):
        for oh in range(OH):
            for ow in range(OW):
                for i in range(kh):
                    hi = oh * sh + i - ph
                    if hi < 0 or hi >= H:
                        continue
                    for j in range(kw):
                        wj = ow * sw + j - pw
                        if wj < 0 or wj >= W:
                            continue
                        for c in range(C):
                            cols[b, oh, ow, (i * kw + j) * C + c] = x[b, c, hi, wj]
    return out_arr


def fold_add(real[:, :, :, ::1] cols, Py_ssize_t C, Py_ssize_t H, Py_ssize_t W,
             int kh, int kw, int sh, int sw, int ph, int pw):
    cdef Py_ssize_t B = cols.shape[0], OH = cols.shape[1], OW = cols.shape[2]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((B, C, H, W), dtype=dtype)
    cdef real[:, :, :, ::1] x = out_arr
    cdef Py_ssize_t b, oh, ow, i, j, c, hi, wj
    for b in range(B):
        for oh in range(OH):
            for ow in range(OW):
                for i in range(kh):
                    hi = oh * sh + i - ph
                    if hi < 0 or hi >= H:
                        continue
                    for j in range(kw):
                        wj = ow * sw + j - pw
                        if wj < 0 or wj >= W:
                            continue
                        for c in range(C):
                            x[b, c, hi, wj] += cols[b, oh, ow, (i * kw + j) * C + c]
    return out_arr


def conv2d_direct(real[:, :, :, ::1] x, real[:, :, :, ::1] w,
                  int sh, int sw, int ph, int pw):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t CO = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t OH = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - kw) // sw + 1
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((B, CO, OH, OW), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, co, oh, ow, c, i, j, hi, wj
    cdef real acc
    for b in range(B):
        for co in range(CO):
            for oh in range(OH):
                for ow in range(OW):
                    acc = 0
                    for c in range(C):
                        for i in range(kh):
                            hi = oh * sh + i - ph
                            if hi < 0 or hi >= H:
                                continue
                            for j in range(kw):
                                wj = ow * sw + j - pw
                                if wj < 0 or wj >= W:
                                    continue
                                acc += x[b, c, hi, wj] * w[co, c, i, j]
                    out[b, co, oh, ow] = acc
    return out_arr
