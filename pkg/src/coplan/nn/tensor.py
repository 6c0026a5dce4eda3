"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations the graph Q-network needs are provided.  Every op records
its parents and a closure that pushes the output gradient back to them;
``backward`` walks the recorded graph in reverse topological order.
"""
from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name!r})"

    def _acc(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._acc(_unbroadcast(g, a.shape))
        b._acc(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._acc(_unbroadcast(g, a.shape))
        b._acc(_unbroadcast(-g, b.shape))

    return Tensor(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        a._acc(_unbroadcast(g * b.data, a.shape))
        b._acc(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    def bw(g):
        a._acc(g * s)

    return Tensor(a.data * s, (a,), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._acc(g @ b.data.T)
        if b.requires_grad:
            b._acc(a.data.T @ g)

    return Tensor(a.data @ b.data, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` as one node (saves a broadcast add on the tape)."""

    def bw(g):
        if x.requires_grad:
            x._acc(g @ w.data.T)
        w._acc(x.data.T @ g)
        b._acc(g.sum(axis=0))

    return Tensor(x.data @ w.data + b.data, (x, w, b), bw)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def bw(g):
        x._acc(np.where(pos, g, slope * g))

    return Tensor(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        gain._acc((g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
        bias._acc(g.reshape(-1, g.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            d = xhat.shape[-1]
            x._acc(inv / d * (d * gx - gx.sum(-1, keepdims=True)
                              - xhat * (gx * xhat).sum(-1, keepdims=True)))

    return Tensor(out, (x, gain, bias), bw)


def concat(parts: list, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._acc(g[tuple(sl)])

    return Tensor(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bw)


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows ``x[index]``; the backward pass scatter-adds."""
    index = np.asarray(index, dtype=np.intp)

    def bw(g):
        if x.requires_grad:
            out = np.zeros_like(x.data)
            np.add.at(out, index, g)
            x._acc(out)

    return Tensor(x.data[index], (x,), bw)


def segment_sum(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    segments = np.asarray(segments, dtype=np.intp)
    out = np.zeros((num_segments,) + x.data.shape[1:])
    np.add.at(out, segments, x.data)

    def bw(g):
        x._acc(g[segments])

    return Tensor(out, (x,), bw)


def segment_mean(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Mean of the rows of each segment; empty segments give zeros."""
    segments = np.asarray(segments, dtype=np.intp)
    counts = np.bincount(segments, minlength=num_segments).astype(np.float64)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    shape = (-1,) + (1,) * (x.data.ndim - 1)
    out = np.zeros((num_segments,) + x.data.shape[1:])
    np.add.at(out, segments, x.data)
    out *= inv.reshape(shape)

    def bw(g):
        x._acc((g * inv.reshape(shape))[segments])

    return Tensor(out, (x,), bw)


def segment_softmax(x: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
    """Softmax over rows sharing a segment id, independently per column."""
    segments = np.asarray(segments, dtype=np.intp)
    mx = np.full((num_segments,) + x.data.shape[1:], -np.inf)
    np.maximum.at(mx, segments, x.data)
    e = np.exp(x.data - mx[segments])
    z = np.zeros_like(mx)
    np.add.at(z, segments, e)
    y = e / z[segments]

    def bw(g):
        gy = g * y
        s = np.zeros_like(mx)
        np.add.at(s, segments, gy)
        x._acc(gy - y * s[segments])

    return Tensor(y, (x,), bw)


def square(x: Tensor) -> Tensor:
    def bw(g):
        x._acc(2.0 * x.data * g)

    return Tensor(x.data * x.data, (x,), bw)


def total(x: Tensor) -> Tensor:
    def bw(g):
        x._acc(np.broadcast_to(g, x.shape))

    return Tensor(x.data.sum(), (x,), bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        x._acc(g.reshape(x.shape))

    return Tensor(x.data.reshape(shape), (x,), bw)


def column(x: Tensor, j: int) -> Tensor:
    """Column ``j`` of a 2-D tensor as a 1-D tensor."""

    def bw(g):
        out = np.zeros_like(x.data)
        out[:, j] = g
        x._acc(out)

    return Tensor(x.data[:, j], (x,), bw)


def _topo(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(outputs: list, grads: list) -> None:
    """Accumulate gradients of ``sum_i <outputs[i], grads[i]>`` into the leaves."""
    for o, g in zip(outputs, grads):
        if o.requires_grad:
            o._acc(np.asarray(g, dtype=np.float64).reshape(o.shape))
    # One synthetic root keeps the topological sort simple.
    root = Tensor(0.0, tuple(o for o in outputs if o.requires_grad))
    for node in reversed(_topo(root)[:-1]):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
