# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled conv/pool kernels. Semantics mirror lyapnet._kernels_py exactly."""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double

cnp.import_array()


def _im2col(real[:, :, :, ::1] x, int kh, int kw, int stride, int pad, real[:, :, ::1] cols):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, ch, p, q, i, j, r, s, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for p in range(kh):
                    for q in range(kw):
                        row = (ch * kh + p) * kw + q
                        for i in range(oh):
                            r = i * stride - pad + p
                            for j in range(ow):
                                s = j * stride - pad + q
                                if 0 <= r < h and 0 <= s < w:
                                    cols[b, row, i * ow + j] = x[b, ch, r, s]
                                else:
                                    cols[b, row, i * ow + j] = 0


def _col2im(real[:, :, ::1] cols, int kh, int kw, int stride, int pad, real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    cdef Py_ssize_t b, ch, p, q, i, j, r, s, row
    with nogil:
        for b in range(n):
            for ch in range(c):
                for p in range(kh):
                    for q in range(kw):
                        row = (ch * kh + p) * kw + q
                        for i in range(oh):
                            r = i * stride - pad + p
                            if r < 0 or r >= h:
                                continue
                            for j in range(ow):
                                s = j * stride - pad + q
                                if 0 <= s < w:
                                    x[b, ch, r, s] += cols[b, row, i * ow + j]


def _maxpool_forward(real[:, :, :, ::1] x, int window, real[:, :, :, ::1] out,
                     cnp.int64_t[:, :, :, ::1] idx):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], oh = out.shape[2], ow = out.shape[3]
    cdef Py_ssize_t b, ch, i, j, p, q, best
    cdef real m, v
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        m = x[b, ch, i * window, j * window]
                        best = 0
                        for p in range(window):
                            for q in range(window):
                                v = x[b, ch, i * window + p, j * window + q]
                                # strict '>' keeps the first maximum in scan order
                                if v > m:
                                    m = v
                                    best = p * window + q
                        out[b, ch, i, j] = m
                        idx[b, ch, i, j] = best


def _maxpool_backward(real[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] idx, int window,
                      real[:, :, :, ::1] dx):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], oh = dout.shape[2], ow = dout.shape[3]
    cdef Py_ssize_t b, ch, i, j, k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        k = idx[b, ch, i, j]
                        dx[b, ch, i * window + k // window, j * window + k % window] += dout[b, ch, i, j]


def im2col(x, kh, kw, stride, pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n, c * kh * kw, oh * ow), dtype=x.dtype)
    _im2col(x, kh, kw, stride, pad, cols)
    return cols


def col2im(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.ascontiguousarray(cols).reshape(n, c * kh * kw, oh * ow)
    x = np.zeros((n, c, h, w), dtype=cols.dtype)
    _col2im(cols, kh, kw, stride, pad, x)
    return x


def maxpool_forward(x, window):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    out = np.empty((n, c, h // window, w // window), dtype=x.dtype)
    idx = np.empty(out.shape, dtype=np.int64)
    _maxpool_forward(x, window, out, idx)
    return out, idx


def maxpool_backward(dout, idx, x_shape, window):
    dout = np.ascontiguousarray(dout)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    _maxpool_backward(dout, np.ascontiguousarray(idx, dtype=np.int64), window, dx)
    return dx
