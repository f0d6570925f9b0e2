"""Pure-numpy im2col / col2im for NHWC convolution.

Reference implementation and fallback for the compiled ``_kernels_c``
extension. Both accumulate col2im contributions in the same (ki, kj) order,
so their results are bit-identical.
"""
import numpy as np


def out_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def im2col(x, kernel, stride, pad):
    """Unfold ``x`` of shape (N, H, W, C) into patch rows.

    Returns an array of shape (N * OH * OW, kernel * kernel * C) whose
    columns are ordered (ki, kj, c).
    """
    n, h, w, c = x.shape
    oh = out_size(h, kernel, stride, pad)
    ow = out_size(w, kernel, stride, pad)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=np.float64)
    xp[:, pad:pad + h, pad:pad + w, :] = x
    cols = np.empty((n, oh, ow, kernel, kernel, c), dtype=np.float64)
    for i in range(kernel):
        for j in range(kernel):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :]
    return cols.reshape(n * oh * ow, kernel * kernel * c)


def col2im(cols, shape, kernel, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patch rows back to (N, H, W, C)."""
    n, h, w, c = shape
    oh = out_size(h, kernel, stride, pad)
    ow = out_size(w, kernel, stride, pad)
    cols = np.ascontiguousarray(cols, dtype=np.float64).reshape(n, oh, ow, kernel, kernel, c)
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=np.float64)
    for i in range(kernel):
        for j in range(kernel):
            xp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += cols[:, :, :, i, j, :]
    return np.ascontiguousarray(xp[:, pad:pad + h, pad:pad + w, :])
