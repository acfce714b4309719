# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled direct-loop kernels for convolution and pooling.

Same signatures and semantics as ``_fallback``. Accumulation is in double
for both float32 and float64 inputs.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double

NAME = "cython"

cnp.import_array()


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


cdef void _conv2d(const real[:, :, :, ::1] x, const real[:, :, :, ::1] w,
                  real[:, :, :, ::1] out, double[::1] bias, bint has_bias,
                  Py_ssize_t stride, Py_ssize_t groups, bint replicate) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], cig = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t ph = (kh - 1) // 2, pw = (kw - 1) // 2
    cdef Py_ssize_t cog = cout // groups
    cdef Py_ssize_t b, co, g, ci, cin_abs, oy, ox, i, j, iy, ix
    cdef double acc
    for b in range(n):
        for co in range(cout):
            g = co // cog
            for oy in range(ho):
                for ox in range(wo):
                    acc = bias[co] if has_bias else 0.0
                    for ci in range(cig):
                        cin_abs = g * cig + ci
                        for i in range(kh):
                            iy = oy * stride + i - ph
                            if iy < 0 or iy >= h:
                                if not replicate:
                                    continue
                                iy = _clamp(iy, h)
                            for j in range(kw):
                                ix = ox * stride + j - pw
                                if ix < 0 or ix >= wd:
                                    if not replicate:
                                        continue
                                    ix = _clamp(ix, wd)
                                acc += <double>w[co, ci, i, j] * <double>x[b, cin_abs, iy, ix]
                    out[b, co, oy, ox] = <real>acc


def conv2d(x, w, bias, Py_ssize_t stride, Py_ssize_t groups, bint replicate):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    cdef Py_ssize_t n = x.shape[0], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t cout = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h + 2 * ((kh - 1) // 2) - kh) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * ((kw - 1) // 2) - kw) // stride + 1
    out = np.empty((n, cout, ho, wo), dtype=x.dtype)
    cdef bint has_bias = bias is not None
    cdef double[::1] bvec = (np.ascontiguousarray(bias, dtype=np.float64) if has_bias
                             else np.zeros(cout))
    if x.dtype == np.float32:
        _conv2d[float](x, w, out, bvec, has_bias, stride, groups, replicate)
    else:
        _conv2d[double](x, w, out, bvec, has_bias, stride, groups, replicate)
    return out


cdef void _pool2d(const real[:, :, :, ::1] x, real[:, :, :, ::1] out, Py_ssize_t k,
                  Py_ssize_t stride, Py_ssize_t lo, bint replicate, bint is_max) noexcept nogil:
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t b, ch, oy, ox, i, j, iy, ix
    cdef double acc, v, inv = 1.0 / (k * k)
    cdef bint outside
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    acc = 0.0
                    for i in range(k):
                        iy = oy * stride + i - lo
                        for j in range(k):
                            ix = ox * stride + j - lo
                            outside = iy < 0 or iy >= h or ix < 0 or ix >= wd
                            if outside and not replicate:
                                v = 0.0
                            else:
                                v = x[b, ch, _clamp(iy, h), _clamp(ix, wd)]
                            if is_max:
                                if (i == 0 and j == 0) or v > acc:
                                    acc = v
                            else:
                                acc += v
                    out[b, ch, oy, ox] = <real>(acc if is_max else acc * inv)


def pool2d(x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t lo, Py_ssize_t hi,
           bint replicate, bint is_max):
    x = np.ascontiguousarray(x)
    cdef Py_ssize_t ho = (x.shape[2] + lo + hi - k) // stride + 1
    cdef Py_ssize_t wo = (x.shape[3] + lo + hi - k) // stride + 1
    out = np.empty((x.shape[0], x.shape[1], ho, wo), dtype=x.dtype)
    if x.dtype == np.float32:
        _pool2d[float](x, out, k, stride, lo, replicate, is_max)
    else:
        _pool2d[double](x, out, k, stride, lo, replicate, is_max)
    return out
