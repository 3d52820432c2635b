"""Parameter-holding layer wrappers around the primitives in ops.py.

Each layer owns its weight tensors (and, for batchnorm, plain-array
running buffers) and knows how to enumerate them with stable dotted
names. Weight decay eligibility is attached at the parameter level:
norm gains/offsets are exempt, everything else decays.
"""

import numpy as np

from . import ops
from .tensor import Tensor, normal, ones, zeros


class Linear:
    def __init__(self, rng, din, dout, bias=True, dtype=np.float32):
        self.weight = normal(rng, (din, dout), 0.02, dtype)
        self.bias = zeros((dout,), dtype, requires_grad=True) if bias else None

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)

    def named_parameters(self, prefix):
        yield prefix + ".weight", self.weight, True
        if self.bias is not None:
            yield prefix + ".bias", self.bias, True


class Conv2d:
    def __init__(self, rng, cin, cout, kernel, stride=(1, 1), pad=(0, 0), groups=1, bias=False, dtype=np.float32):
        kh, kw = kernel
        self.weight = normal(rng, (cout, cin // groups, kh, kw), 0.02, dtype)
        self.bias = zeros((cout,), dtype, requires_grad=True) if bias else None
        self.stride = tuple(stride)
        self.pad = tuple(pad)
        self.groups = groups

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.groups)

    def named_parameters(self, prefix):
        yield prefix + ".weight", self.weight, True
        if self.bias is not None:
            yield prefix + ".bias", self.bias, True


class BatchNorm2d:
    def __init__(self, channels, dtype=np.float32, momentum=0.1, eps=1e-5):
        self.gamma = ones((channels,), dtype, requires_grad=True)
        self.beta = zeros((channels,), dtype, requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x, training):
        return ops.batchnorm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, self.momentum, self.eps,
        )

    def named_parameters(self, prefix):
        yield prefix + ".gamma", self.gamma, False
        yield prefix + ".beta", self.beta, False

    def named_buffers(self, prefix):
        yield prefix + ".running_mean", self.running_mean
        yield prefix + ".running_var", self.running_var


class LayerNorm:
    def __init__(self, dim, dtype=np.float32, eps=1e-6):
        self.gamma = ones((dim,), dtype, requires_grad=True)
        self.beta = zeros((dim,), dtype, requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        return ops.layernorm(x, self.gamma, self.beta, self.eps)

    def named_parameters(self, prefix):
        yield prefix + ".gamma", self.gamma, False
        yield prefix + ".beta", self.beta, False


def collect_parameters(layers):
    """Flatten [(prefix, layer-or-tensor, decay?)] triples into a named list."""
    out = []
    for prefix, obj, *rest in layers:
        if isinstance(obj, Tensor):
            decay = rest[0] if rest else True
            out.append((prefix, obj, decay))
        else:
            out.extend(obj.named_parameters(prefix))
    return out
