"""A small reverse-mode autodiff over float64 numpy arrays.

Only the operations the branching policy needs are provided. Each op records
its parents and a closure that maps the output gradient to parent gradients.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.01


class NonFinite(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def backward(self):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that stops ops from recording the graph."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev


def _op(data, parents, backward):
    needs = _GRAD_ENABLED[0] and any(p.requires_grad for p in parents)
    return Tensor(data, needs, parents if needs else (), backward if needs else None)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    return _op(a.data + b.data, (a, b),
               lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    a = constant(a)
    return _op(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    return _op(a.data * b.data, (a, b),
               lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def reshape(a, shape) -> Tensor:
    return _op(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def scale(a, s: float) -> Tensor:
    return _op(a.data * s, (a,), lambda g: (g * s,))


def one_minus(a) -> Tensor:
    return _op(1.0 - a.data, (a,), lambda g: (-g,))


def linear(x, W, b=None) -> Tensor:
    """``x @ W.T + b`` with ``W`` stored as (out, in)."""
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        grads = [g @ W.data, g.T @ x.data]
        if b is not None:
            grads.append(g.sum(axis=0))
        return grads

    parents = (x, W) if b is None else (x, W, b)
    return _op(out, parents, backward)


def matvec(X, w) -> Tensor:
    """``X @ w`` for a matrix and a vector."""
    return _op(X.data @ w.data, (X, w), lambda g: (np.outer(g, w.data), X.data.T @ g))


def take(w, start: int, stop: int) -> Tensor:
    """Contiguous slice of a vector."""
    def backward(g):
        full = np.zeros_like(w.data)
        full[start:stop] = g
        return (full,)
    return _op(w.data[start:stop], (w,), backward)


def leaky_relu(x, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    return _op(np.where(pos, x.data, slope * x.data), (x,),
               lambda g: (np.where(pos, g, slope * g),))


def sigmoid(x) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    return _op(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x) -> Tensor:
    t = np.tanh(x.data)
    return _op(t, (x,), lambda g: (g * (1.0 - t * t),))


def gather(x, idx) -> Tensor:
    """Rows ``x[idx]`` (works for vectors and matrices)."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = x.shape[0]

    def backward(g):
        if g.ndim == 1:
            return (np.bincount(idx, weights=g, minlength=rows),)
        sel = sp.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))), shape=(rows, idx.size))
        return (np.asarray(sel @ g),)

    return _op(x.data[idx], (x,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [constant(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
               lambda g: tuple(np.split(g, splits, axis=axis)))


def scale_rows(X, s) -> Tensor:
    """``X * s[:, None]``."""
    return _op(X.data * s.data[:, None], (X, s),
               lambda g: (g * s.data[:, None], (g * X.data).sum(axis=1)))


def total(x) -> Tensor:
    return _op(np.array(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),))


def mean(x) -> Tensor:
    k = x.data.size
    return _op(np.array(x.data.sum() / k), (x,), lambda g: (np.full_like(x.data, g / k),))


class Segments:
    """Grouping of entries into consecutive segments.

    ``ids`` must be sorted ascending; groups may be empty.
    """

    def __init__(self, ids, num_groups: int):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and np.any(np.diff(ids) < 0):
            raise ValueError("segment ids must be sorted")
        self.ids = ids
        self.num_groups = num_groups
        self.counts = np.bincount(ids, minlength=num_groups)
        self.nonempty = np.flatnonzero(self.counts)
        self.starts = (np.cumsum(self.counts) - self.counts)[self.nonempty]
        self.matrix = sp.csr_matrix((np.ones(ids.size), (ids, np.arange(ids.size))),
                                    shape=(num_groups, ids.size))

    def group_max(self, x):
        out = np.zeros(self.num_groups)
        if x.size:
            out[self.nonempty] = np.maximum.reduceat(x, self.starts)
        return out

    def group_sum(self, x):
        return np.bincount(self.ids, weights=x, minlength=self.num_groups)


def segment_sum(X, seg: Segments) -> Tensor:
    """Per-group row sums of a matrix; empty groups give zero rows."""
    out = np.asarray(seg.matrix @ X.data)
    return _op(out, (X,), lambda g: (np.asarray(seg.matrix.T @ g),))


def segment_softmax(x, seg: Segments) -> Tensor:
    """Softmax of a vector within each segment."""
    shifted = x.data - seg.group_max(x.data)[seg.ids]
    e = np.exp(shifted)
    p = e / seg.group_sum(e)[seg.ids]

    def backward(g):
        inner = seg.group_sum(g * p)[seg.ids]
        return (p * (g - inner),)

    return _op(p, (x,), backward)


def segment_log_softmax(x, seg: Segments) -> Tensor:
    shifted = x.data - seg.group_max(x.data)[seg.ids]
    lse = np.log(seg.group_sum(np.exp(shifted)))
    out = shifted - lse[seg.ids]
    p = np.exp(out)

    def backward(g):
        return (g - p * seg.group_sum(g)[seg.ids],)

    return _op(out, (x,), backward)


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFinite(f"non-finite values in {what}")
    return t
