"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps an ndarray and records, for every operation, a
closure that routes the output gradient to the operation's inputs.  Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph once in reverse
topological order and accumulates gradients into every tensor reachable from
the loss that has ``requires_grad`` set.

The engine is deliberately small: it supports exactly the operations the
model and losses need, in whatever float dtype the inputs carry (float32 for
training, float64 for gradient checks).
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractViolation

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense real array plus gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- construction of graph nodes -------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- basic properties --------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- backward pass -----------------------------------------------------

    def backward(self) -> None:
        """Reverse pass from a scalar output.

        Visits each recorded node exactly once, parents after children.
        """
        if self.data.size != 1:
            raise ContractViolation("backward() requires a scalar output")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)
                # free intermediate gradients and closures eagerly
                node._backward = None
                node._parents = ()
                if node is not self:
                    node.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)


def _toposort(root: Tensor) -> list[Tensor]:
    """Iterative post-order DFS; every node's parents precede it."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data + b

        def bw(g):
            _accum(a, g)

        return Tensor._node(data, (a,), bw)
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return Tensor._node(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return Tensor._node(data, (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        data = a.data * b

        def bw(g):
            _accum(a, g * b)

        return Tensor._node(data, (a,), bw)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, _unbroadcast(g * bd, ad.shape))
        _accum(b, _unbroadcast(g * ad, bd.shape))

    return Tensor._node(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractViolation("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractViolation(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def bw(g):
        _accum(a, g @ bd.T)
        _accum(b, ad.T @ g)

    return Tensor._node(data, (a, b), bw)


# -- reductions ---------------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum()

    def bw(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return Tensor._node(np.asarray(data), (a,), bw)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    data = a.data.mean()

    def bw(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape))

    return Tensor._node(np.asarray(data), (a,), bw)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    n = a.data.shape[axis]
    data = a.data.mean(axis=axis)

    def bw(g):
        _accum(a, np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape))

    return Tensor._node(data, (a,), bw)


# -- structural ops -----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)
    orig = a.data.shape

    def bw(g):
        _accum(a, g.reshape(orig))

    return Tensor._node(data, (a,), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice ``[start, start+length)`` along ``axis``."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def bw(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[idx] += g

    return Tensor._node(data, (a,), bw)


def concat(ts: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]

    def bw(g):
        off = 0
        for t, s in zip(ts, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(off, off + s)
            _accum(t, g[tuple(idx)])
            off += s

    return Tensor._node(data, tuple(ts), bw)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows of a 2-D tensor; duplicate indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    data = a.data[idx]

    def bw(g):
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return Tensor._node(data, (a,), bw)


# -- activations --------------------------------------------------------------


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ContractViolation(f"leaky_relu slope must lie in (0,1), got {slope}")
    mask = a.data >= 0
    data = np.where(mask, a.data, a.data * slope)

    def bw(g):
        _accum(a, np.where(mask, g, g * slope))

    return Tensor._node(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    # tanh formulation avoids exp overflow for large |x|
    data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def bw(g):
        _accum(a, g * data * (1.0 - data))

    return Tensor._node(data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - data * data))

    return Tensor._node(data, (a,), bw)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
