"""Differentiable primitive operations.

Every function takes/returns Tensor values, computes the forward result
eagerly with NumPy (convolution/pooling route through the selected
kernel backend), and records a backward rule on the output. Gradient
conventions follow the usual reverse-mode rules; broadcasting backward
sums over the broadcast axes.

dtype policy: binary operations require matching dtypes (float32 for
training, float64 for gradient verification); nothing upcasts silently.
"""

import numpy as np
from scipy.special import erf

from . import _kernels
from ._kernels import numpy_kernels as _npk
from .errors import ContractError, DivisibilityError, ShapeError
from .tensor import Tensor, pool_margin_sink

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def _ensure(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _check_dtypes(*ts):
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ContractError(f"mixed dtypes {dt} and {t.dtype}; cast explicitly")


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of NumPy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------


def add(a, b):
    a, b = _ensure(a), _ensure(b, a)
    _check_dtypes(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(out, (a, b), backward)


def sub(a, b):
    a, b = _ensure(a), _ensure(b, a)
    _check_dtypes(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor._result(out, (a, b), backward)


def mul(a, b):
    a, b = _ensure(a), _ensure(b, a)
    _check_dtypes(a, b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(out, (a, b), backward)


def scale(a, s):
    s = float(s)
    out = a.data * s

    def backward(g):
        return (g * s,)

    return Tensor._result(out, (a,), backward)


def neg(a):
    return scale(a, -1.0)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    """Batched contraction a[..., m, k] @ b[..., k, n]; batch dims broadcast."""
    _check_dtypes(a, b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {tuple(a.shape)} vs {tuple(b.shape)}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(out, (a, b), backward)


def linear(x, w, b=None):
    """x[..., din] @ w[din, dout] + b."""
    _check_dtypes(x, w)
    din, dout = w.shape
    if x.shape[-1] != din:
        raise ShapeError(f"linear: input features {x.shape[-1]} != weight rows {din}")
    x2 = x.data.reshape(-1, din)
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(x.shape[:-1] + (dout,))

    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, dout)
        gx = (g2 @ w.data.T).reshape(x.data.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._result(out, parents, backward)


# -- convolution and pooling ---------------------------------------------------


def conv2d(x, w, bias=None, stride=(1, 1), pad=(0, 0), groups=1):
    """Grouped 2-d cross-correlation (no kernel flip).

    x: [B, C, H, W], w: [Co, C/groups, kh, kw]. Output dims use floor
    division; configs where that loses pixels are rejected upstream.
    """
    _check_dtypes(x, w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d wants 4-d input and weight, got {x.shape} and {w.shape}")
    b_, c, h, wd = x.shape
    co, cg, kh, kw = w.shape
    if c % groups or co % groups:
        raise ShapeError(f"channels ({c}) and output channels ({co}) must divide groups ({groups})")
    if cg != c // groups:
        raise ShapeError(f"weight expects {cg} channels per group, input provides {c // groups}")
    oh = (h + 2 * pad[0] - kh) // stride[0] + 1
    ow = (wd + 2 * pad[1] - kw) // stride[1] + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d output would be {oh}x{ow} for input {h}x{wd}, kernel {kh}x{kw}")

    out = _kernels.conv2d_forward(x.data, w.data, stride, pad, groups)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gx, gw = _kernels.conv2d_backward(
            x.data, w.data, g, stride, pad, groups, x.requires_grad, w.requires_grad
        )
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._result(out, parents, backward)


def maxpool2d(x, kernel, stride, pad=(0, 0)):
    """Windowed maximum with -inf padding; ties route to the first
    occurrence in row-major window order."""
    b_, c, h, w = x.shape
    kh, kw = kernel
    if kh > h + 2 * pad[0] or kw > w + 2 * pad[1]:
        raise ShapeError(f"pool window {kernel} larger than padded input {h + 2 * pad[0]}x{w + 2 * pad[1]}")
    out, arg = _kernels.maxpool2d_forward(x.data, kernel, stride, pad)

    sink = pool_margin_sink()
    if sink is not None:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad[0], pad[0]), (pad[1], pad[1])), constant_values=-np.inf)
        win = _npk._windows(xp, kh, kw, stride[0], stride[1], out.shape[2], out.shape[3])
        win = win.reshape(win.shape[:4] + (kh * kw,))
        top2 = np.partition(win, kh * kw - 2, axis=-1)[..., -2:]
        margins = top2[..., 1] - top2[..., 0]
        sink.append(float(margins[np.isfinite(margins)].min()) if np.isfinite(margins).any() else np.inf)

    def backward(g):
        return (_kernels.maxpool2d_backward(g, arg, x.data.shape, kernel, stride, pad),)

    return Tensor._result(out, (x,), backward)


def maxpool1d_seq(x, k, stride=None):
    """Non-overlapping max over groups of k consecutive tokens: [B, N, D] -> [B, N/k, D]."""
    if stride is None:
        stride = k
    if stride != k:
        raise ContractError(f"maxpool1d_seq is non-overlapping: kernel {k} must equal stride {stride}")
    b, n, d = x.shape
    if n % k:
        raise DivisibilityError(f"token count {n} not divisible by pool size {k}")
    v = x.data.reshape(b, n // k, k, d)
    arg = np.argmax(v, axis=2)
    out = np.take_along_axis(v, arg[:, :, None, :], axis=2)[:, :, 0, :]

    sink = pool_margin_sink()
    if sink is not None and k > 1:
        top2 = np.partition(v, k - 2, axis=2)[:, :, -2:, :]
        sink.append(float((top2[:, :, 1, :] - top2[:, :, 0, :]).min()))

    def backward(g):
        gv = np.zeros_like(v)
        np.put_along_axis(gv, arg[:, :, None, :], g[:, :, None, :], axis=2)
        return (gv.reshape(x.data.shape),)

    return Tensor._result(out, (x,), backward)


# -- nonlinearities -------------------------------------------------------------


def gelu(x):
    """Exact GELU x * Phi(x) with Phi the standard normal CDF (erf form)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return Tensor._result(out.astype(x.dtype, copy=False), (x,), backward)


def relu(x):
    out = np.maximum(x.data, 0)

    def backward(g):
        return (g * (x.data > 0),)

    return Tensor._result(out, (x,), backward)


def softmax(x, axis=-1):
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        gy = g * out
        return (gy - out * gy.sum(axis=axis, keepdims=True),)

    return Tensor._result(out, (x,), backward)


# -- normalization ---------------------------------------------------------------


def layernorm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis, then affine."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = xc * ivar
    out = xhat * gamma.data + beta.data

    def backward(g):
        d = x.shape[-1]
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gamma.data
        dx = ivar * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return Tensor._result(out, (x, gamma, beta), backward)


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Channel batchnorm over [B, C, H, W].

    Train mode normalizes with biased batch statistics over (B, H, W) and
    updates the running buffers in place (the running variance stores the
    unbiased estimator); eval mode normalizes with the buffers.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"batchnorm wants [B, C, H, W], got {x.shape}")
    axes = (0, 2, 3)
    gshape = (1, -1, 1, 1)
    eps = np.asarray(eps, dtype=x.dtype)

    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(gshape)
        var = (xc * xc).mean(axis=axes)
        n = x.data.size // x.shape[1]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        ivar = 1.0 / np.sqrt(var + eps)
        xhat = xc * ivar.reshape(gshape)
        out = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

        def backward(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gamma.data.reshape(gshape)
            dx = ivar.reshape(gshape) * (
                dxhat
                - dxhat.mean(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True)
            )
            return dx, dgamma, dbeta

        return Tensor._result(out, (x, gamma, beta), backward)

    ivar = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype, copy=False)
    xhat = (x.data - running_mean.reshape(gshape).astype(x.dtype, copy=False)) * ivar.reshape(gshape)
    out = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

    def backward_eval(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dx = g * (gamma.data * ivar).reshape(gshape)
        return dx, dgamma, dbeta

    return Tensor._result(out, (x, gamma, beta), backward_eval)


# -- shape manipulation -----------------------------------------------------------


def reshape(x, shape):
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.data.shape),)

    return Tensor._result(out, (x,), backward)


def transpose(x, axes):
    """Permute axes (general transpose)."""
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return Tensor._result(x.data.transpose(axes), (x,), backward)


def broadcast_to(x, shape):
    out = np.broadcast_to(x.data, shape)

    def backward(g):
        return (_unbroadcast(g, x.shape),)

    return Tensor._result(out, (x,), backward)


def concat(tensors, axis):
    _check_dtypes(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ndim = out.ndim
    axis = axis % ndim
    slices = []
    start = 0
    for t in tensors:
        sl = [slice(None)] * ndim
        sl[axis] = slice(start, start + t.shape[axis])
        slices.append(tuple(sl))
        start += t.shape[axis]

    def backward(g):
        return tuple(np.ascontiguousarray(g[sl]) for sl in slices)

    return Tensor._result(out, tuple(tensors), backward)


def split(x, sizes, axis):
    """Split into len(sizes) tensors along axis; sizes must sum to the dim."""
    if sum(sizes) != x.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not sum to dimension {x.shape[axis]}")
    outs = []
    start = 0
    for s in sizes:
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(start, start + s)
        sl = tuple(sl)
        start += s

        def backward(g, sl=sl):
            gx = np.zeros_like(x.data)
            gx[sl] = g
            return (gx,)

        outs.append(Tensor._result(x.data[sl], (x,), backward))
    return outs


# -- reductions ---------------------------------------------------------------------


def _reduce_backward_shape(x_shape, axis, keepdims):
    if axis is None:
        return (1,) * len(x_shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(x_shape) for a in axes)
    if keepdims:
        return None  # g already has singleton dims
    return tuple(1 if i in axes else s for i, s in enumerate(x_shape))


def sum_(x, axis=None, keepdims=False):
    out = x.data.sum(axis=axis, keepdims=keepdims)
    bshape = _reduce_backward_shape(x.shape, axis, keepdims)

    def backward(g):
        if bshape is not None:
            g = g.reshape(bshape)
        return (np.broadcast_to(g, x.data.shape).astype(x.dtype, copy=False),)

    return Tensor._result(np.atleast_1d(out), (x,), backward)


def mean(x, axis=None, keepdims=False):
    out = x.data.mean(axis=axis, keepdims=keepdims)
    bshape = _reduce_backward_shape(x.shape, axis, keepdims)
    count = x.data.size if axis is None else x.data.size // out.size

    def backward(g):
        if bshape is not None:
            g = g.reshape(bshape)
        return (np.broadcast_to(g / count, x.data.shape).astype(x.dtype, copy=False),)

    return Tensor._result(np.atleast_1d(out), (x,), backward)


# -- classification -------------------------------------------------------------------


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels, log-sum-exp stable.

    logits: [B, K]; labels: integer array [B]. Returns a scalar tensor.
    """
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {b}")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    se = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(se[:, 0])
    nll = lse - z[np.arange(b), labels]
    out = np.asarray([nll.mean()], dtype=logits.dtype)
    probs = e / se

    def backward(g):
        gz = probs.copy()
        gz[np.arange(b), labels] -= 1.0
        return (gz * (g.reshape(-1)[0] / b),)

    return Tensor._result(out, (logits,), backward)


def argmax(x, axis):
    """Index of the per-axis maximum; plain integer array, no gradient."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.argmax(data, axis=axis)


# Operator sugar: thin delegation, same semantics as the functions above.
Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(self, other)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__mul__ = lambda self, other: mul(self, other) if isinstance(other, Tensor) else scale(self, other)
Tensor.__rmul__ = lambda self, other: scale(self, other)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
