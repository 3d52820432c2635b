"""Pure-NumPy convolution/pooling kernels (fallback backend).

Grouped cross-correlation runs as one GEMM per group over strided window
views; the depthwise case (groups == channels, multiplier 1) instead
accumulates shifted slices, which avoids materializing window columns.
The compiled backend in _cykernels.pyx implements the same interface.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_dim(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def _windows(xp, kh, kw, sh, sw, oh, ow):
    """Strided view [B, C, oh, ow, kh, kw] over the padded input."""
    b, c = xp.shape[:2]
    sb, sc, srow, scol = xp.strides
    return as_strided(
        xp,
        shape=(b, c, oh, ow, kh, kw),
        strides=(sb, sc, srow * sh, scol * sw, srow, scol),
        writeable=False,
    )


def conv2d_forward(x, w, stride, pad, groups):
    b, c, h, wd = x.shape
    co, cg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    oh, ow = _out_dim(h, kh, sh, ph), _out_dim(wd, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x

    if groups == c and cg == 1 and co == c:
        y = np.zeros((b, c, oh, ow), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                y += w[:, 0, i, j][None, :, None, None] * xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
        return y

    win = _windows(xp, kh, kw, sh, sw, oh, ow)
    cog = co // groups
    y = np.empty((b, co, oh, ow), dtype=x.dtype)
    for g in range(groups):
        cols = win[:, g * cg : (g + 1) * cg].transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, cg * kh * kw)
        wg = w[g * cog : (g + 1) * cog].reshape(cog, cg * kh * kw)
        y[:, g * cog : (g + 1) * cog] = (cols @ wg.T).transpose(0, 2, 1).reshape(b, cog, oh, ow)
    return y


def conv2d_backward(x, w, gy, stride, pad, groups, need_gx=True, need_gw=True):
    b, c, h, wd = x.shape
    co, cg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = pad
    oh, ow = gy.shape[2], gy.shape[3]
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x
    gx = gw = None

    if groups == c and cg == 1 and co == c:
        if need_gw:
            gw = np.empty_like(w)
            for i in range(kh):
                for j in range(kw):
                    xs = xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
                    gw[:, 0, i, j] = (gy * xs).sum(axis=(0, 2, 3))
        if need_gx:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += (
                        w[:, 0, i, j][None, :, None, None] * gy
                    )
            gx = gxp[:, :, ph : ph + h, pw : pw + wd] if (ph or pw) else gxp
        return gx, gw

    cog = co // groups
    if need_gw:
        win = _windows(xp, kh, kw, sh, sw, oh, ow)
        gw = np.empty_like(w)
    if need_gx:
        gxp = np.zeros_like(xp)
    for g in range(groups):
        gyg = gy[:, g * cog : (g + 1) * cog].reshape(b, cog, oh * ow)
        wg = w[g * cog : (g + 1) * cog].reshape(cog, cg * kh * kw)
        if need_gw:
            cols = win[:, g * cg : (g + 1) * cg].transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, cg * kh * kw)
            gw[g * cog : (g + 1) * cog] = (
                gyg.transpose(1, 0, 2).reshape(cog, b * oh * ow) @ cols
            ).reshape(cog, cg, kh, kw)
        if need_gx:
            gcols = (wg.T @ gyg).reshape(b, cg, kh, kw, oh, ow)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, g * cg : (g + 1) * cg, i : i + sh * oh : sh, j : j + sw * ow : sw] += gcols[
                        :, :, i, j
                    ]
    if need_gx:
        gx = gxp[:, :, ph : ph + h, pw : pw + wd] if (ph or pw) else gxp
    return gx, gw


def maxpool2d_forward(x, kernel, stride, pad):
    b, c, h, w = x.shape
    kh, kw = kernel
    sh, sw = stride
    ph, pw = pad
    oh, ow = _out_dim(h, kh, sh, ph), _out_dim(w, kw, sw, pw)
    if ph or pw:
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf)
    else:
        xp = x
    win = _windows(xp, kh, kw, sh, sw, oh, ow).reshape(b, c, oh, ow, kh * kw)
    # np.argmax keeps the first occurrence in row-major window order.
    arg = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), arg.astype(np.int64)


def maxpool2d_backward(gy, arg, x_shape, kernel, stride, pad):
    b, c, h, w = x_shape
    kh, kw = kernel
    sh, sw = stride
    ph, pw = pad
    oh, ow = gy.shape[2], gy.shape[3]
    hp, wp = h + 2 * ph, w + 2 * pw
    rows = arg // kw + np.arange(oh)[None, None, :, None] * sh
    cols = arg % kw + np.arange(ow)[None, None, None, :] * sw
    plane = np.arange(b * c)[:, None] * (hp * wp)
    flat = plane + (rows * wp + cols).reshape(b * c, oh * ow)
    gxp = np.zeros(b * c * hp * wp, dtype=gy.dtype)
    # Windows may overlap (stride < kernel), so scatter must accumulate.
    np.add.at(gxp, flat.ravel(), gy.ravel())
    gxp = gxp.reshape(b, c, hp, wp)
    return gxp[:, :, ph : ph + h, pw : pw + w] if (ph or pw) else gxp
