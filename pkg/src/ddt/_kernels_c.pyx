# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im for NHWC convolution.

Must stay bit-identical to ``_kernels_py``: col2im accumulates in (ki, kj)
outer order, matching the numpy slice-add loop.
"""
import numpy as np


def out_size(Py_ssize_t size, Py_ssize_t kernel, Py_ssize_t stride, Py_ssize_t pad):
    return (size + 2 * pad - kernel) // stride + 1


def im2col(x, Py_ssize_t kernel, Py_ssize_t stride, Py_ssize_t pad):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kernel) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kernel) // stride + 1
    out = np.zeros((n * oh * ow, kernel * kernel * c), dtype=np.float64)
    cdef double[:, ::1] cv = out
    cdef Py_ssize_t b, y, xx, i, j, ch, row, col, iy, ix
    with nogil:
        for b in range(n):
            for y in range(oh):
                for xx in range(ow):
                    row = (b * oh + y) * ow + xx
                    for i in range(kernel):
                        iy = y * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for j in range(kernel):
                            ix = xx * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            col = (i * kernel + j) * c
                            for ch in range(c):
                                cv[row, col + ch] = xv[b, iy, ix, ch]
    return out


def col2im(cols, shape, Py_ssize_t kernel, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = shape[0], h = shape[1], w = shape[2], c = shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kernel) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kernel) // stride + 1
    cdef double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(
        n * oh * ow, kernel * kernel * c)
    out = np.zeros((n, h, w, c), dtype=np.float64)
    cdef double[:, :, :, ::1] ov = out
    cdef Py_ssize_t b, y, xx, i, j, ch, row, col, iy, ix
    with nogil:
        for i in range(kernel):
            for j in range(kernel):
                col = (i * kernel + j) * c
                for b in range(n):
                    for y in range(oh):
                        iy = y * stride + i - pad
                        if iy < 0 or iy >= h:
                            continue
                        for xx in range(ow):
                            ix = xx * stride + j - pad
                            if ix < 0 or ix >= w:
                                continue
                            row = (b * oh + y) * ow + xx
                            for ch in range(c):
                                ov[b, iy, ix, ch] += cv[row, col + ch]
    return out
