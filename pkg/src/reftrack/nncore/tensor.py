"""Dense float64 tensors with reverse-mode autodiff.

Small tape-based engine: every op records its inputs and a backward
closure on the output tensor; ``Tensor.backward()`` walks the graph in
reverse topological order.  Rank is capped at 3; everything is row-major
numpy float64 underneath.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (inference fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class DimensionError(ValueError):
    """Shape mismatch between operands."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise DimensionError(f"rank {arr.ndim} > 3 not supported")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # -- autograd ------------------------------------------------------------

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar tensor")
        topo, seen = [], set()

        def visit(t):
            if id(t) in seen:
                return
            seen.add(id(t))
            for p in t._parents:
                visit(p)
            topo.append(t)

        visit(self)
        self._accumulate(np.ones_like(self.data))
        for t in reversed(topo):
            if t._backward is not None:
                t._backward()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    """Wrap an op result; records the tape node only when grad is on."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


def _unbroadcast(grad, shape):
    """Sum grad over axes that numpy broadcasting expanded."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.shape))
        return run

    return _make(data, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(-_unbroadcast(out.grad, b.shape))
        return run

    return _make(data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * a.data, b.shape))
        return run

    return _make(data, (a, b), bwd)


def scale(a, s: float):
    a = _as_tensor(a)
    s = float(s)
    data = a.data * s

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * s)
        return run

    return _make(data, (a,), bwd)


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0.0
    data = a.data * mask

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * mask)
        return run

    return _make(data, (a,), bwd)


def sigmoid(a):
    a = _as_tensor(a)
    # overflow-safe in both directions
    x = a.data
    pos = x >= 0
    data = np.empty_like(x)
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * data * (1.0 - data))
        return run

    return _make(data, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    data = np.log(a.data)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad / a.data)
        return run

    return _make(data, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    data = np.exp(a.data)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * data)
        return run

    return _make(data, (a,), bwd)


def sqrt(a):
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * 0.5 / data)
        return run

    return _make(data, (a,), bwd)


def powc(a, c: float):
    """Elementwise power with a constant exponent."""
    a = _as_tensor(a)
    c = float(c)
    data = a.data ** c

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * c * a.data ** (c - 1.0))
        return run

    return _make(data, (a,), bwd)


# -- structural --------------------------------------------------------------


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects rank-2 operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ out.grad)
        return run

    return _make(data, (a, b), bwd)


def transpose(a):
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects rank 2, got shape {a.shape}")
    data = a.data.T.copy()

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad.T)
        return run

    return _make(data, (a,), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad.reshape(a.shape))
        return run

    return _make(data, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        def run():
            for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(lo, hi)
                    t._accumulate(out.grad[tuple(idx)])
        return run

    return _make(data, tuple(tensors), bwd)


def tslice(a, key):
    a = _as_tensor(a)
    data = a.data[key]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data)

    def bwd(out):
        def run():
            if a.requires_grad:
                g = np.zeros_like(a.data)
                np.add.at(g, key, out.grad)
                a._accumulate(g)
        return run

    return _make(data, (a,), bwd)


def tsum(a, axis=None):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis)

    def bwd(out):
        def run():
            if a.requires_grad:
                g = out.grad
                if axis is not None:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.shape).copy())
        return run

    return _make(data, (a,), bwd)


def tmean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def softmax(a, axis=-1):
    """Overflow-guarded softmax (max subtraction; the max is a constant)."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(out):
        def run():
            if a.requires_grad:
                dot = (out.grad * data).sum(axis=axis, keepdims=True)
                a._accumulate(data * (out.grad - dot))
        return run

    return _make(data, (a,), bwd)


def layernorm(a, eps=1e-5):
    """Normalize the last axis to zero mean, unit variance (no affine)."""
    a = _as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def bwd(out):
        def run():
            if a.requires_grad:
                n = a.shape[-1]
                g = out.grad
                gm = g.mean(axis=-1, keepdims=True)
                gxm = (g * data).mean(axis=-1, keepdims=True)
                a._accumulate(inv * (g - gm - data * gxm))
        return run

    return _make(data, (a,), bwd)


def linear(x, w, b=None):
    """x @ w (+ b broadcast over rows)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def embedding_lookup(table, ids):
    """Select rows of a (V, D) table by an integer id sequence."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise DimensionError("embedding ids must be a flat sequence")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError("embedding id out of range")
    data = table.data[ids]

    def bwd(out):
        def run():
            if table.requires_grad:
                g = np.zeros_like(table.data)
                np.add.at(g, ids, out.grad)
                table._accumulate(g)
        return run

    return _make(data, (table,), bwd)


# -- attention ---------------------------------------------------------------


def _attention_single(q, k, v, dh):
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dh))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def multi_head_attention(q, k, v, heads, wq, wk, wv, wo, bq=None, bk=None, bv=None, bo=None,
                         return_weights=False):
    """Scaled dot-product attention with per-head column slicing.

    q: (N, D); k, v: (L, D).  All four projections are (D, D).
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    d = q.shape[-1]
    if d % heads != 0:
        raise DimensionError(f"feature dim {d} not divisible by {heads} heads")
    if k.shape[0] != v.shape[0]:
        raise DimensionError("key/value row counts differ")
    dh = d // heads
    qp = linear(q, wq, bq)
    kp = linear(k, wk, bk)
    vp = linear(v, wv, bv)
    outs, wts = [], []
    for h in range(heads):
        cols = slice(h * dh, (h + 1) * dh)
        o, w = _attention_single(qp[:, cols], kp[:, cols], vp[:, cols], dh)
        outs.append(o)
        wts.append(w)
    out = linear(concat(outs, axis=1), wo, bo)
    if return_weights:
        return out, wts
    return out
