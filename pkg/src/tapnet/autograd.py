"""Minimal reverse-mode differentiation over float64 numpy arrays.

Every operation on a :class:`Tensor` that involves a tensor with
``requires_grad`` records its parents and a backward closure. Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order. Leaf gradients accumulate across calls; intermediate
gradients are reset at the start of every backward pass.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError

_grad_enabled = True


@contextmanager
def no_grad():
    """Run forward computations without recording a graph."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g, shape):
    # sum out axes that numpy broadcasting added or stretched
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, _prev=(), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def _accum(self, g):
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    # graph plumbing

    @staticmethod
    def _result(data, parents, op, backward) -> Tensor:
        track = _grad_enabled and any(p.requires_grad for p in parents)
        if not track:
            return Tensor(data)
        out = Tensor(data, requires_grad=True, _prev=tuple(parents), _op=op)
        out._backward = backward
        return out

    def _topo(self):
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
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self, grad=None):
        if not self._prev:
            raise StateError("backward called on a tensor with no recorded computation")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = self._topo()
        for node in order:
            if node._prev:
                node.grad = None
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.data.shape).copy()
        for node in reversed(order):
            if node._prev and node.grad is not None:
                node._backward(node.grad)

    # elementwise arithmetic

    def __add__(self, other):
        other = as_tensor(other)

        def bw(g):
            self._accum(g)
            other._accum(g)

        return Tensor._result(self.data + other.data, (self, other), "add", bw)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._result(-self.data, (self,), "neg", lambda g: self._accum(-g))

    def __sub__(self, other):
        other = as_tensor(other)

        def bw(g):
            self._accum(g)
            other._accum(-g)

        return Tensor._result(self.data - other.data, (self, other), "sub", bw)

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)

        def bw(g):
            self._accum(g * other.data)
            other._accum(g * self.data)

        return Tensor._result(self.data * other.data, (self, other), "mul", bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)

        def bw(g):
            self._accum(g / other.data)
            other._accum(-g * self.data / other.data**2)

        return Tensor._result(self.data / other.data, (self, other), "div", bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        if isinstance(p, Tensor):
            raise TypeError("only constant exponents are supported")
        p = float(p)
        return Tensor._result(
            self.data**p, (self,), "pow", lambda g: self._accum(g * p * self.data ** (p - 1))
        )

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(f"matmul expects 2-D operands, got {self.shape} @ {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul shape mismatch {self.shape} @ {other.shape}")

        def bw(g):
            self._accum(g @ other.data.T)
            other._accum(self.data.T @ g)

        return Tensor._result(self.data @ other.data, (self, other), "matmul", bw)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    def __getitem__(self, idx):
        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            self._accum(full)

        return Tensor._result(self.data[idx], (self,), "index", bw)

    # unary

    def relu(self):
        # subgradient at exactly 0 is 0
        mask = self.data > 0
        return Tensor._result(self.data * mask, (self,), "relu", lambda g: self._accum(g * mask))

    def exp(self):
        out = np.exp(self.data)
        return Tensor._result(out, (self,), "exp", lambda g: self._accum(g * out))

    def log(self):
        return Tensor._result(np.log(self.data), (self,), "log", lambda g: self._accum(g / self.data))

    def sqrt(self):
        out = np.sqrt(self.data)

        def bw(g):
            # derivative is unbounded at 0; treat it as 0 there
            safe = np.where(out > 0, out, 1.0)
            self._accum(np.where(out > 0, g / (2.0 * safe), 0.0))

        return Tensor._result(out, (self,), "sqrt", bw)

    # reductions and reshaping

    def sum(self, axis=None, keepdims: bool = False):
        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.data.shape))

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum", bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._result(
            self.data.reshape(shape), (self,), "reshape", lambda g: self._accum(g.reshape(self.data.shape))
        )

    @property
    def T(self):
        return Tensor._result(self.data.T, (self,), "transpose", lambda g: self._accum(g.T))

    def log_softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

        def bw(g):
            self._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

        return Tensor._result(out, (self,), "log_softmax", bw)


def conv2d(x: Tensor, w: Tensor, b: Tensor, padding: int = 0) -> Tensor:
    """Stride-1 2-D cross-correlation. x: (B, C, H, W), w: (O, C, k, k), b: (O,)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, kernel {w.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    p = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    Ho, Wo = xp.shape[2] - kh + 1, xp.shape[3] - kw + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {xp.shape[2:]}")
    # (B, C, Ho, Wo, kh, kw) -> rows of patches
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = (cols @ wmat.T + b.data).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        w._accum((gmat.T @ cols).reshape(w.shape))
        b._accum(gmat.sum(axis=0))
        if x.requires_grad:
            dcols = (gmat @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + Ho, j : j + Wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x._accum(dxp[:, :, p : p + H, p : p + W])

    return Tensor._result(np.ascontiguousarray(out), (x, w, b), "conv2d", bw)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that don't fill a window are dropped."""
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects (B, C, H, W), got {x.shape}")
    B, C, H, W = x.shape
    Ho, Wo = H // size, W // size
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"pool size {size} larger than input {H}x{W}")
    win = x.data[:, :, : Ho * size, : Wo * size].reshape(B, C, Ho, size, Wo, size)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        dwin = np.zeros((B, C, Ho, Wo, size * size))
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dwin = dwin.reshape(B, C, Ho, Wo, size, size).transpose(0, 1, 2, 4, 3, 5)
        full = np.zeros_like(x.data)
        full[:, :, : Ho * size, : Wo * size] = dwin.reshape(B, C, Ho * size, Wo * size)
        x._accum(full)

    return Tensor._result(out, (x,), "max_pool2d", bw)
