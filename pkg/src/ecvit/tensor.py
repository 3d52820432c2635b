"""Dense row-major tensors and the reverse-mode differentiation tape.

A Tensor wraps a contiguous (row-major) NumPy buffer plus an optional
gradient buffer of the same shape. Operations (see ops.py) record their
inputs and a backward rule on the output tensor; those records form the
tape. backward() replays the tape in reverse topological order, summing
the contributions of every consumer into each producer's gradient.

Tensors are immutable after the forward pass that created them. A tape
and its pending gradients belong to a single thread; use no_grad() for
evaluation passes that should not record anything.
"""

import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, ShapeError

FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording on this thread for the duration."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextmanager
def record_pool_margins():
    """Collect the top-1 minus top-2 margin of every max-pool window
    evaluated on this thread.

    Max pooling is continuous but kinked where two window entries tie;
    finite differences are only valid when every margin comfortably
    exceeds the probe step. The gradient checker uses this to certify
    its evaluation point.
    """
    prev = getattr(_state, "pool_margins", None)
    _state.pool_margins = []
    try:
        yield _state.pool_margins
    finally:
        _state.pool_margins = prev


def pool_margin_sink():
    return getattr(_state, "pool_margins", None)


class Tensor:
    """n-d numeric array with optional gradient and tape linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- graph construction (used by ops.py) --------------------------------

    @staticmethod
    def _result(data, parents, backward_fn):
        """Wrap a forward result, recording the tape node if needed."""
        out = Tensor.__new__(Tensor)
        if data.ndim == 0:
            data = data.reshape(1)
        out.data = data
        out.grad = None
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {tuple(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same buffer, cut from the tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    # -- reverse-mode differentiation ----------------------------------------

    def backward(self):
        """Populate .grad on every requires_grad tensor reachable from here.

        The receiver must be a scalar (single-element) tensor. Repeated
        calls without zeroing accumulate, and a tensor feeding several
        consumers receives the sum of their contributions.
        """
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {tuple(self.shape)}")
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        # Pending gradients for interior nodes; leaves accumulate into .grad.
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.data.shape:
                    raise ShapeError(
                        f"backward produced grad of shape {pg.shape} for parent of shape {p.data.shape}"
                    )
                prev = pending.get(id(p))
                pending[id(p)] = pg if prev is None else prev + pg


def tensor(data, requires_grad=False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, dtype=np.float32, requires_grad=False) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def normal(rng: np.random.Generator, shape, std=0.02, dtype=np.float32, requires_grad=True) -> Tensor:
    """Zero-mean normal draw in float64, cast to the target dtype.

    Drawing in float64 first keeps the float32/float64 builds of one seed
    numerically aligned (same underlying stream).
    """
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=requires_grad)
