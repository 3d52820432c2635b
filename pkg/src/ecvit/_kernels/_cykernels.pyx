# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution/pooling kernels (hot-loop backend).

Same interface and semantics as numpy_kernels.py; direct C loops instead
of strided-view GEMMs. Single-threaded on purpose: determinism first.
"""

import numpy as np

cimport numpy as cnp
cimport cython

ctypedef fused floating:
    float
    double


def _pad(x, ph, pw, fill=0.0):
    if ph == 0 and pw == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=fill)


cdef void _conv_fwd_loop(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                         floating[:, :, :, ::1] y,
                         Py_ssize_t groups, Py_ssize_t sh, Py_ssize_t sw) noexcept nogil:
    cdef Py_ssize_t b = xp.shape[0], cin = xp.shape[1]
    cdef Py_ssize_t co = w.shape[0], cg = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t cog = co // groups
    cdef Py_ssize_t ib, io, g, ic, ii, ij, ih, iw
    cdef floating acc
    for ib in range(b):
        for io in range(co):
            g = io // cog
            for ih in range(oh):
                for iw in range(ow):
                    acc = 0
                    for ic in range(cg):
                        for ii in range(kh):
                            for ij in range(kw):
                                acc = acc + w[io, ic, ii, ij] * xp[ib, g * cg + ic, ih * sh + ii, iw * sw + ij]
                    y[ib, io, ih, iw] = acc


def conv2d_forward(x, w, stride, pad, groups):
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ph = pad[0], pw = pad[1]
    kh, kw = w.shape[2], w.shape[3]
    oh = (x.shape[2] + 2 * ph - kh) // sh + 1
    ow = (x.shape[3] + 2 * pw - kw) // sw + 1
    xp = _pad(x, ph, pw)
    w = np.ascontiguousarray(w)
    y = np.zeros((x.shape[0], w.shape[0], oh, ow), dtype=x.dtype)
    if x.dtype == np.float32:
        _conv_fwd_loop[float](xp, w, y, groups, sh, sw)
    else:
        _conv_fwd_loop[double](xp, w, y, groups, sh, sw)
    return y


cdef void _conv_bwd_loop(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] w,
                         floating[:, :, :, ::1] gy,
                         floating[:, :, :, ::1] gxp, floating[:, :, :, ::1] gw,
                         Py_ssize_t groups, Py_ssize_t sh, Py_ssize_t sw,
                         bint need_gx, bint need_gw) noexcept nogil:
    cdef Py_ssize_t b = xp.shape[0]
    cdef Py_ssize_t co = w.shape[0], cg = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t cog = co // groups
    cdef Py_ssize_t ib, io, g, ic, ii, ij, ih, iw
    cdef floating gval
    for ib in range(b):
        for io in range(co):
            g = io // cog
            for ih in range(oh):
                for iw in range(ow):
                    gval = gy[ib, io, ih, iw]
                    for ic in range(cg):
                        for ii in range(kh):
                            for ij in range(kw):
                                if need_gw:
                                    gw[io, ic, ii, ij] += gval * xp[ib, g * cg + ic, ih * sh + ii, iw * sw + ij]
                                if need_gx:
                                    gxp[ib, g * cg + ic, ih * sh + ii, iw * sw + ij] += gval * w[io, ic, ii, ij]


def conv2d_backward(x, w, gy, stride, pad, groups, need_gx=True, need_gw=True):
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ph = pad[0], pw = pad[1]
    xp = _pad(x, ph, pw)
    w = np.ascontiguousarray(w)
    gy = np.ascontiguousarray(gy)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    if x.dtype == np.float32:
        _conv_bwd_loop[float](xp, w, gy, gxp, gw, groups, sh, sw, need_gx, need_gw)
    else:
        _conv_bwd_loop[double](xp, w, gy, gxp, gw, groups, sh, sw, need_gx, need_gw)
    h, wd = x.shape[2], x.shape[3]
    gx = gxp[:, :, ph : ph + h, pw : pw + wd] if (ph or pw) else gxp
    return (gx if need_gx else None), (gw if need_gw else None)


cdef void _pool_fwd_loop(floating[:, :, :, ::1] xp, floating[:, :, :, ::1] y,
                         cnp.int64_t[:, :, :, ::1] arg,
                         Py_ssize_t kh, Py_ssize_t kw,
                         Py_ssize_t sh, Py_ssize_t sw) noexcept nogil:
    cdef Py_ssize_t b = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t ib, ic, ih, iw, ii, ij, besti
    cdef floating best, v
    for ib in range(b):
        for ic in range(c):
            for ih in range(oh):
                for iw in range(ow):
                    best = xp[ib, ic, ih * sh, iw * sw]
                    besti = 0
                    for ii in range(kh):
                        for ij in range(kw):
                            v = xp[ib, ic, ih * sh + ii, iw * sw + ij]
                            # strict > keeps the first occurrence on ties
                            if v > best:
                                best = v
                                besti = ii * kw + ij
                    y[ib, ic, ih, iw] = best
                    arg[ib, ic, ih, iw] = besti


def maxpool2d_forward(x, kernel, stride, pad):
    cdef Py_ssize_t kh = kernel[0], kw = kernel[1]
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ph = pad[0], pw = pad[1]
    oh = (x.shape[2] + 2 * ph - kh) // sh + 1
    ow = (x.shape[3] + 2 * pw - kw) // sw + 1
    xp = _pad(x, ph, pw, fill=-np.inf)
    y = np.empty((x.shape[0], x.shape[1], oh, ow), dtype=x.dtype)
    arg = np.empty((x.shape[0], x.shape[1], oh, ow), dtype=np.int64)
    if x.dtype == np.float32:
        _pool_fwd_loop[float](xp, y, arg, kh, kw, sh, sw)
    else:
        _pool_fwd_loop[double](xp, y, arg, kh, kw, sh, sw)
    return y, arg


cdef void _pool_bwd_loop(floating[:, :, :, ::1] gy, cnp.int64_t[:, :, :, ::1] arg,
                         floating[:, :, :, ::1] gxp,
                         Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw) noexcept nogil:
    cdef Py_ssize_t b = gy.shape[0], c = gy.shape[1]
    cdef Py_ssize_t oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t ib, ic, ih, iw, a
    for ib in range(b):
        for ic in range(c):
            for ih in range(oh):
                for iw in range(ow):
                    a = arg[ib, ic, ih, iw]
                    gxp[ib, ic, ih * sh + a // kw, iw * sw + a % kw] += gy[ib, ic, ih, iw]


def maxpool2d_backward(gy, arg, x_shape, kernel, stride, pad):
    cdef Py_ssize_t kh = kernel[0], kw = kernel[1]
    cdef Py_ssize_t sh = stride[0], sw = stride[1]
    cdef Py_ssize_t ph = pad[0], pw = pad[1]
    b, c, h, w = x_shape
    gy = np.ascontiguousarray(gy)
    gxp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=gy.dtype)
    if gy.dtype == np.float32:
        _pool_bwd_loop[float](gy, arg, gxp, kw, sh, sw)
    else:
        _pool_bwd_loop[double](gy, arg, gxp, kw, sh, sw)
    return gxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else gxp
