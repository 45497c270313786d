# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel lane: the gather/scatter and pooling inner loops.

Twin of ``mgrdenoise.engine.kernels_numpy``; both lanes must produce
bit-identical results (same accumulation order, same tie-breaking).
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "cython"

ctypedef fused floating:
    float
    double


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t k, Py_ssize_t stride,
           Py_ssize_t oh, Py_ssize_t ow):
    cdef Py_ssize_t n = xp.shape[0]
    cdef Py_ssize_t c = xp.shape[1]
    if floating is float:
        out_arr = np.empty((n, c * k * k, oh * ow), dtype=np.float32)
    else:
        out_arr = np.empty((n, c * k * k, oh * ow), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, ki, kj, i, j, row
    for b in range(n):
        for ci in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ci * k + ki) * k + kj
                    for i in range(oh):
                        for j in range(ow):
                            out[b, row, i * ow + j] = xp[b, ci, i * stride + ki, j * stride + kj]
    return out_arr


def col2im(floating[:, :, ::1] cols, Py_ssize_t n, Py_ssize_t c,
           Py_ssize_t hp, Py_ssize_t wp, Py_ssize_t k, Py_ssize_t stride,
           Py_ssize_t oh, Py_ssize_t ow):
    if floating is float:
        out_arr = np.zeros((n, c, hp, wp), dtype=np.float32)
    else:
        out_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, ki, kj, i, j, row
    # (ki, kj) outermost to match the numpy lane's accumulation order exactly.
    for ki in range(k):
        for kj in range(k):
            for b in range(n):
                for ci in range(c):
                    row = (ci * k + ki) * k + kj
                    for i in range(oh):
                        for j in range(ow):
                            out[b, ci, i * stride + ki, j * stride + kj] += cols[b, row, i * ow + j]
    return out_arr


def maxpool2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t oh = x.shape[2] // 2
    cdef Py_ssize_t ow = x.shape[3] // 2
    if floating is float:
        y_arr = np.empty((n, c, oh, ow), dtype=np.float32)
    else:
        y_arr = np.empty((n, c, oh, ow), dtype=np.float64)
    idx_arr = np.empty((n, c, oh, ow), dtype=np.uint8)
    cdef floating[:, :, :, ::1] y = y_arr
    cdef unsigned char[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ci, i, j
    cdef floating v, best
    cdef unsigned char pos
    for b in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    best = x[b, ci, 2 * i, 2 * j]
                    pos = 0
                    v = x[b, ci, 2 * i, 2 * j + 1]
                    if v > best:
                        best = v; pos = 1
                    v = x[b, ci, 2 * i + 1, 2 * j]
                    if v > best:
                        best = v; pos = 2
                    v = x[b, ci, 2 * i + 1, 2 * j + 1]
                    if v > best:
                        best = v; pos = 3
                    y[b, ci, i, j] = best
                    idx[b, ci, i, j] = pos
    return y_arr, idx_arr


def maxpool2_backward(floating[:, :, :, ::1] grad, unsigned char[:, :, :, ::1] idx,
                      Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t n = grad.shape[0]
    cdef Py_ssize_t c = grad.shape[1]
    cdef Py_ssize_t oh = grad.shape[2]
    cdef Py_ssize_t ow = grad.shape[3]
    if floating is float:
        out_arr = np.zeros((n, c, h, w), dtype=np.float32)
    else:
        out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j
    cdef unsigned char pos
    for b in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    pos = idx[b, ci, i, j]
                    out[b, ci, 2 * i + (pos >> 1), 2 * j + (pos & 1)] = grad[b, ci, i, j]
    return out_arr


def upsample2_forward(floating[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t c = x.shape[1]
    cdef Py_ssize_t h = x.shape[2]
    cdef Py_ssize_t w = x.shape[3]
    if floating is float:
        out_arr = np.empty((n, c, 2 * h, 2 * w), dtype=np.float32)
    else:
        out_arr = np.empty((n, c, 2 * h, 2 * w), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j
    cdef floating v
    for b in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(w):
                    v = x[b, ci, i, j]
                    out[b, ci, 2 * i, 2 * j] = v
                    out[b, ci, 2 * i, 2 * j + 1] = v
                    out[b, ci, 2 * i + 1, 2 * j] = v
                    out[b, ci, 2 * i + 1, 2 * j + 1] = v
    return out_arr


def upsample2_backward(floating[:, :, :, ::1] grad):
    cdef Py_ssize_t n = grad.shape[0]
    cdef Py_ssize_t c = grad.shape[1]
    cdef Py_ssize_t h = grad.shape[2] // 2
    cdef Py_ssize_t w = grad.shape[3] // 2
    if floating is float:
        out_arr = np.empty((n, c, h, w), dtype=np.float32)
    else:
        out_arr = np.empty((n, c, h, w), dtype=np.float64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j
    for b in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(w):
                    out[b, ci, i, j] = (grad[b, ci, 2 * i, 2 * j]
                                        + grad[b, ci, 2 * i, 2 * j + 1]
                                        + grad[b, ci, 2 * i + 1, 2 * j]
                                        + grad[b, ci, 2 * i + 1, 2 * j + 1])
    return out_arr
