"""Kernel backend selection.

The compiled Cython core is preferred when its extension module built;
otherwise the NumPy implementation serves as a drop-in fallback. Set
ECVIT_BACKEND=python|compiled to force one (compiled raises if missing).
set_backend() exists for benchmarks and tests; the two backends agree to
float rounding (summation order differs), not necessarily bitwise.
"""

import importlib
import os

from . import numpy_kernels

try:
    _cykernels = importlib.import_module("._cykernels", __name__)
except ImportError:
    _cykernels = None

_active = None
_active_name = ""


def available_backends():
    names = ["python"]
    if _cykernels is not None:
        names.insert(0, "compiled")
    return names


def set_backend(name):
    global _active, _active_name
    if name == "compiled":
        if _cykernels is None:
            raise RuntimeError("ECVIT_BACKEND=compiled but the Cython extension is not built")
        _active = _cykernels
    elif name == "python":
        _active = numpy_kernels
    else:
        raise ValueError(f"unknown kernel backend {name!r} (want 'python' or 'compiled')")
    _active_name = name


def get_backend():
    return _active_name


_requested = os.environ.get("ECVIT_BACKEND", "auto")
if _requested == "auto":
    set_backend("compiled" if _cykernels is not None else "python")
else:
    set_backend(_requested)


def conv2d_forward(x, w, stride, pad, groups):
    return _active.conv2d_forward(x, w, stride, pad, groups)


def conv2d_backward(x, w, gy, stride, pad, groups, need_gx=True, need_gw=True):
    return _active.conv2d_backward(x, w, gy, stride, pad, groups, need_gx, need_gw)


def maxpool2d_forward(x, kernel, stride, pad):
    return _active.maxpool2d_forward(x, kernel, stride, pad)


def maxpool2d_backward(gy, arg, x_shape, kernel, stride, pad):
    return _active.maxpool2d_backward(gy, arg, x_shape, kernel, stride, pad)
