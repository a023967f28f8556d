# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled convolution and pooling kernels.

Same signatures and semantics as ``_kernels_py``; float64, channels-last.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv2d_forward(const double[:, :, :, ::1] x, const double[:, :, :, ::1] k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c_in = x.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], c_out = k.shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1, wo = (w - kw) // stride + 1
    out_arr = np.zeros((n, ho, wo, c_out))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, p, q, c, o
    cdef double xv
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for p in range(kh):
                    for q in range(kw):
                        for c in range(c_in):
                            xv = x[b, i * stride + p, j * stride + q, c]
                            for o in range(c_out):
                                out[b, i, j, o] += xv * k[p, q, c, o]
    return out_arr


def conv2d_backward_kernel(const double[:, :, :, ::1] x, const double[:, :, :, ::1] g,
                           Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t n = g.shape[0], ho = g.shape[1], wo = g.shape[2], c_out = g.shape[3]
    cdef Py_ssize_t c_in = x.shape[3]
    dk_arr = np.zeros((kh, kw, c_in, c_out))
    cdef double[:, :, :, ::1] dk = dk_arr
    cdef Py_ssize_t b, i, j, p, q, c, o
    cdef double xv
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for p in range(kh):
                    for q in range(kw):
                        for c in range(c_in):
                            xv = x[b, i * stride + p, j * stride + q, c]
                            for o in range(c_out):
                                dk[p, q, c, o] += xv * g[b, i, j, o]
    return dk_arr


def conv2d_backward_input(const double[:, :, :, ::1] g, const double[:, :, :, ::1] k,
                          Py_ssize_t h, Py_ssize_t w, Py_ssize_t stride):
    cdef Py_ssize_t n = g.shape[0], ho = g.shape[1], wo = g.shape[2], c_out = g.shape[3]
    cdef Py_ssize_t kh = k.shape[0], kw = k.shape[1], c_in = k.shape[2]
    dx_arr = np.zeros((n, h, w, c_in))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef Py_ssize_t b, i, j, p, q, c, o
    cdef double acc
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for p in range(kh):
                    for q in range(kw):
                        for c in range(c_in):
                            acc = 0.0
                            for o in range(c_out):
                                acc = acc + g[b, i, j, o] * k[p, q, c, o]
                            dx[b, i * stride + p, j * stride + q, c] += acc
    return dx_arr


def mean_pool_forward(const double[:, :, :, ::1] x, Py_ssize_t size):
    cdef Py_ssize_t n = x.shape[0], h = x.shape[1], w = x.shape[2], c_n = x.shape[3]
    cdef Py_ssize_t ho = h // size, wo = w // size
    out_arr = np.zeros((n, ho, wo, c_n))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double scale = 1.0 / (size * size)
    cdef Py_ssize_t b, i, j, p, q, c
    cdef double acc
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for c in range(c_n):
                    acc = 0.0
                    for p in range(size):
                        for q in range(size):
                            acc = acc + x[b, i * size + p, j * size + q, c]
                    out[b, i, j, c] = acc * scale
    return out_arr


def mean_pool_backward(const double[:, :, :, ::1] g, Py_ssize_t h, Py_ssize_t w, Py_ssize_t size):
    cdef Py_ssize_t n = g.shape[0], ho = g.shape[1], wo = g.shape[2], c_n = g.shape[3]
    dx_arr = np.zeros((n, h, w, c_n))
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef double scale = 1.0 / (size * size)
    cdef Py_ssize_t b, i, j, p, q, c
    cdef double v
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                for c in range(c_n):
                    v = g[b, i, j, c] * scale
                    for p in range(size):
                        for q in range(size):
                            dx[b, i * size + p, j * size + q, c] = v
    return dx_arr
