"""Pure-numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with identical
semantics and identical floating-point summation order, so the two
backends produce bitwise-equal results.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, k, stride, pad):
    """Unfold ``x[N, C, H, W]`` into ``[N, C*k*k, Ho*Wo]`` patch columns.

    Row ``(c, ki, kj)`` of the result holds input channel ``c`` shifted by
    kernel offset ``(ki, kj)``, matching ``kernel.reshape(F, -1)``.
    """
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # [N, C, Ho, Wo, k, k] -> [N, C, k, k, Ho, Wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(cols, x_shape, k, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patch columns back to an image."""
    n, c, h, w = x_shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * (ho - 1) + 1 : stride,
                kj : kj + stride * (wo - 1) + 1 : stride] += cols[:, :, ki, kj]
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def round_half_away(v):
    """Round to nearest integer, ties away from zero (float in, float out)."""
    v = np.asarray(v, dtype=np.float64)
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def quantize_dequantize(coeffs, table):
    """``round_half_away(coeffs / table) * table`` over 8x8 blocks.

    ``coeffs`` has shape ``[..., 8, 8]`` and ``table`` shape ``[8, 8]``.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    table = np.asarray(table, dtype=np.float64)
    return round_half_away(coeffs / table) * table
