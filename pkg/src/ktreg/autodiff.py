"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray and remembers how it was produced.
Calling ``backward()`` on a scalar Tensor walks the tape in reverse
topological order and accumulates gradients into every leaf.

All the op functions below (``log``, ``matmul``, ``relu`` ...) dispatch on
their arguments: if nothing is a Tensor they fall through to plain numpy,
so the same formula code serves both the recorded (training) path and the
plain-array (evaluation / oracle) path.

Conventions baked in here and relied on elsewhere:
  * hinge ``relu`` uses the one-sided subgradient, d/dx max(0, x) = 0 at x = 0;
  * ``absolute`` likewise has gradient 0 at x = 0;
  * ``clip`` passes gradient only strictly inside the clamp interval.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum out prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were broadcast from size 1
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _val(x):
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _is_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


class Tensor:
    """Node in the computation tape."""

    __slots__ = ("value", "grad", "_parents", "_pull")

    # make numpy defer binary ops to our reflected operators
    __array_ufunc__ = None

    def __init__(self, value, parents=(), pull=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._pull = pull  # pull(gout): push gout into parents

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.value.shape)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Backpropagate from this (scalar) tensor through the tape."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = []
        seen = set()
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._pull is not None:
                node._pull(node.grad)

    # -- operators ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def _binary(a, b, out_val, da, db):
    """Build the output node of a binary op.

    da/db map the output gradient to each input's gradient contribution
    (called only for Tensor inputs).
    """
    parents = tuple(x for x in (a, b) if isinstance(x, Tensor))

    def pull(g):
        if isinstance(a, Tensor):
            a._accumulate(da(g))
        if isinstance(b, Tensor):
            b._accumulate(db(g))

    return Tensor(out_val, parents, pull)


def _unary(x, out_val, dx):
    def pull(g):
        x._accumulate(dx(g))

    return Tensor(out_val, (x,), pull)


def add(a, b):
    if not _is_tensor(a, b):
        return _val(a) + _val(b)
    va, vb = _val(a), _val(b)
    return _binary(a, b, va + vb, lambda g: g, lambda g: g)


def sub(a, b):
    if not _is_tensor(a, b):
        return _val(a) - _val(b)
    va, vb = _val(a), _val(b)
    return _binary(a, b, va - vb, lambda g: g, lambda g: -g)


def mul(a, b):
    if not _is_tensor(a, b):
        return _val(a) * _val(b)
    va, vb = _val(a), _val(b)
    return _binary(a, b, va * vb, lambda g: g * vb, lambda g: g * va)


def div(a, b):
    if not _is_tensor(a, b):
        return _val(a) / _val(b)
    va, vb = _val(a), _val(b)
    return _binary(a, b, va / vb, lambda g: g / vb, lambda g: -g * va / (vb * vb))


def power(x, p):
    if not isinstance(x, Tensor):
        return _val(x) ** p
    v = x.value
    return _unary(x, v**p, lambda g: g * p * v ** (p - 1))


def matmul(a, b):
    if not _is_tensor(a, b):
        return _val(a) @ _val(b)
    va, vb = _val(a), _val(b)
    return _binary(a, b, va @ vb, lambda g: g @ vb.T, lambda g: va.T @ g)


def log(x):
    if not isinstance(x, Tensor):
        return np.log(_val(x))
    v = x.value
    return _unary(x, np.log(v), lambda g: g / v)


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(_val(x))
    out = np.exp(x.value)
    return _unary(x, out, lambda g: g * out)


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(_val(x))
    out = np.tanh(x.value)
    deriv = 1.0 - out * out
    return _unary(x, out, lambda g: g * deriv)


def _sigmoid_val(v: np.ndarray) -> np.ndarray:
    # stable in both tails via the tanh identity; exact 0.5 at v = 0
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def sigmoid(x):
    if not isinstance(x, Tensor):
        return _sigmoid_val(np.asarray(_val(x)))
    out = _sigmoid_val(x.value)
    deriv = out * (1.0 - out)
    return _unary(x, out, lambda g: g * deriv)


def relu(x):
    """max(0, x) with subgradient 0 at x = 0."""
    if not isinstance(x, Tensor):
        v = _val(x)
        return np.maximum(v, 0.0)
    v = x.value
    mask = v > 0
    return _unary(x, np.where(mask, v, 0.0), lambda g: g * mask)


def absolute(x):
    """|x| with subgradient 0 at x = 0."""
    if not isinstance(x, Tensor):
        return np.abs(_val(x))
    s = np.sign(x.value)
    return _unary(x, np.abs(x.value), lambda g: g * s)


def clip(x, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    if not isinstance(x, Tensor):
        return np.clip(_val(x), lo, hi)
    v = x.value
    mask = (v > lo) & (v < hi)
    return _unary(x, np.clip(v, lo, hi), lambda g: g * mask)


def sum_(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(_val(x), axis=axis, keepdims=keepdims)
    v = x.value
    out = np.sum(v, axis=axis, keepdims=keepdims)

    def dx(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, v.shape)

    return _unary(x, out, dx)


def mean(x, axis=None, keepdims=False):
    v = _val(x)
    if axis is None:
        n = v.size
    else:
        n = v.shape[axis]
    return div(sum_(x, axis=axis, keepdims=keepdims), float(n))


def take(x, idx):
    """Select rows (axis 0): out = x[idx]. idx may repeat; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.intp)
    if not isinstance(x, Tensor):
        return _val(x)[idx]
    v = x.value

    def dx(g):
        acc = np.zeros_like(v)
        np.add.at(acc, idx, g)
        return acc

    return _unary(x, v[idx], dx)


def pick(x, cols):
    """out[i] = x[i, cols[i]] for a 2-D input."""
    cols = np.asarray(cols, dtype=np.intp)
    if not isinstance(x, Tensor):
        v = _val(x)
        return v[np.arange(v.shape[0]), cols]
    v = x.value
    rows = np.arange(v.shape[0])

    def dx(g):
        acc = np.zeros_like(v)
        np.add.at(acc, (rows, cols), g)
        return acc

    return _unary(x, v[rows, cols], dx)


def gather_rows(x, idx):
    """out[i, j] = x[i, idx[i, j]] for 2-D x and per-row index matrix idx."""
    idx = np.asarray(idx, dtype=np.intp)
    if not isinstance(x, Tensor):
        return np.take_along_axis(_val(x), idx, axis=1)
    v = x.value
    rows = np.arange(v.shape[0])[:, None]

    def dx(g):
        acc = np.zeros_like(v)
        np.add.at(acc, (np.broadcast_to(rows, idx.shape), idx), g)
        return acc

    return _unary(x, np.take_along_axis(v, idx, axis=1), dx)


def slice_(x, key):
    """Basic slicing with gradient scattered back into place."""
    if not isinstance(x, Tensor):
        return _val(x)[key]
    v = x.value

    def dx(g):
        acc = np.zeros_like(v)
        acc[key] = g
        return acc

    return _unary(x, v[key], dx)


def stack(xs, axis=0):
    """Stack equally-shaped inputs along a new axis."""
    if not _is_tensor(*xs):
        return np.stack([_val(x) for x in xs], axis=axis)
    vals = [_val(x) for x in xs]
    out = np.stack(vals, axis=axis)
    parents = tuple(x for x in xs if isinstance(x, Tensor))

    def pull(g):
        pieces = np.moveaxis(g, axis, 0)
        for x, piece in zip(xs, pieces):
            if isinstance(x, Tensor):
                x._accumulate(piece)

    return Tensor(out, parents, pull)
