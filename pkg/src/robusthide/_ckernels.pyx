# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; twin of ``_pykernels`` with the same summation order."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, fabs, copysign
from libc.string cimport memcpy, memset

cnp.import_array()

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] x, real[:, :, ::1] cols, int k, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t b, ch, ki, kj, oy, ox, iy, ox0, ox1
    cdef real* src
    cdef real* dst
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(k):
                    for kj in range(k):
                        dst = &cols[b, (ch * k + ki) * k + kj, 0]
                        # valid output columns: 0 <= ox*stride + kj - pad < w
                        ox0 = 0
                        while ox0 < wo and ox0 * stride + kj - pad < 0:
                            ox0 = ox0 + 1
                        ox1 = wo
                        while ox1 > ox0 and (ox1 - 1) * stride + kj - pad >= w:
                            ox1 = ox1 - 1
                        for oy in range(ho):
                            iy = oy * stride + ki - pad
                            if iy < 0 or iy >= h:
                                memset(dst, 0, wo * sizeof(real))
                            else:
                                src = &x[b, ch, iy, 0] + (kj - pad)
                                for ox in range(ox0):
                                    dst[ox] = 0
                                if stride == 1:
                                    memcpy(dst + ox0, src + ox0, (ox1 - ox0) * sizeof(real))
                                else:
                                    for ox in range(ox0, ox1):
                                        dst[ox] = src[ox * stride]
                                for ox in range(ox1, wo):
                                    dst[ox] = 0
                            dst = dst + wo


def _col2im(real[:, :, ::1] cols, real[:, :, :, ::1] out, int k, int stride, int pad):
    # out is the padded image buffer, zero-initialised by the caller.
    # (ki, kj) outermost: each output element sums in the same order as the
    # numpy backend's slice-add loop.
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1]
    cdef Py_ssize_t hp = out.shape[2], wp = out.shape[3]
    cdef Py_ssize_t ho = (hp - k) // stride + 1
    cdef Py_ssize_t wo = (wp - k) // stride + 1
    cdef Py_ssize_t b, oy, ox, ch, ki, kj
    cdef real* src
    cdef real* dst
    with nogil:
        for ki in range(k):
            for kj in range(k):
                for b in range(n):
                    for ch in range(c):
                        src = &cols[b, (ch * k + ki) * k + kj, 0]
                        for oy in range(ho):
                            dst = &out[b, ch, oy * stride + ki, kj]
                            for ox in range(wo):
                                dst[ox * stride] += src[ox]
                            src = src + wo


def im2col(x, int k, int stride, int pad):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    cols = np.empty((n, c * k * k, ho * wo), dtype=x.dtype)
    _im2col(x, cols, k, stride, pad)
    return cols


def col2im(cols, x_shape, int k, int stride, int pad):
    n, c, h, w = x_shape
    cols = np.ascontiguousarray(cols).reshape(n, c * k * k, -1)
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    _col2im(cols, out, k, stride, pad)
    if pad:
        out = out[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(out)


def round_half_away(v):
    cdef cnp.ndarray[double, ndim=1] flat
    arr = np.array(v, dtype=np.float64, copy=True, order="C")
    flat = arr.reshape(-1)
    cdef Py_ssize_t i, m = flat.shape[0]
    with nogil:
        for i in range(m):
            flat[i] = copysign(floor(fabs(flat[i]) + 0.5), flat[i])
    return arr


def quantize_dequantize(coeffs, table):
    cdef cnp.ndarray[double, ndim=3] cf
    cdef cnp.ndarray[double, ndim=2] tb
    arr = np.array(coeffs, dtype=np.float64, copy=True, order="C")
    shape = arr.shape
    cf = arr.reshape(-1, 8, 8)
    tb = np.ascontiguousarray(table, dtype=np.float64)
    cdef Py_ssize_t b, i, j, m = cf.shape[0]
    cdef double q
    with nogil:
        for b in range(m):
            for i in range(8):
                for j in range(8):
                    q = cf[b, i, j] / tb[i, j]
                    cf[b, i, j] = copysign(floor(fabs(q) + 0.5), q) * tb[i, j]
    return arr.reshape(shape)
