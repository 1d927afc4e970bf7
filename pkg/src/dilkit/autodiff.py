"""Minimal reverse-mode autodiff over numpy float64 arrays.

Each op builds a Tensor holding a `_backward` closure; `backward()` runs
the closures in reverse topological order, accumulating into `.grad`
with +=.  Gradients are cleared by the optimizer step, not here.
"""
from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ContractError(ValueError):
    """A documented pre/postcondition was violated."""


def _as_f64(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "stop_gradient", "_prev", "_backward")

    def __init__(self, data, requires_grad: bool = False, stop_gradient: bool = False,
                 _prev: tuple = ()):
        self.data = _as_f64(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.stop_gradient = bool(stop_gradient)
        self._prev = _prev
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.stop_gradient or not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError("backward() requires a scalar loss, got shape %r" % (self.shape,))
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if p.requires_grad and not p.stop_gradient and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _live(t: Tensor) -> bool:
    return t.requires_grad and not t.stop_gradient


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _make(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    req = any(_live(p) for p in parents)
    return Tensor(data, requires_grad=req, _prev=tuple(parents) if req else ())


# -- primitives --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data + b.data, (a, b))
    if out.requires_grad:
        def _back():
            g = out.grad
            a._accum(_unbroadcast(g, a.data.shape))
            b._accum(_unbroadcast(g, b.data.shape))
        out._backward = _back
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = _make(a.data * b.data, (a, b))
    if out.requires_grad:
        def _back():
            g = out.grad
            a._accum(_unbroadcast(g * b.data, a.data.shape))
            b._accum(_unbroadcast(g * a.data, b.data.shape))
        out._backward = _back
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ContractError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ContractError(
            "matmul shape mismatch: %r @ %r" % (a.data.shape, b.data.shape))
    out = _make(a.data @ b.data, (a, b))
    if out.requires_grad:
        def _back():
            g = out.grad
            a._accum(g @ b.data.T)
            b._accum(a.data.T @ g)
        out._backward = _back
    return out


def relu(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = _make(np.maximum(a.data, 0.0), (a,))
    if out.requires_grad:
        mask = a.data > 0.0
        def _back():
            a._accum(out.grad * mask)
        out._backward = _back
    return out


def exp(a: Tensor) -> Tensor:
    a = _wrap(a)
    val = np.exp(a.data)
    out = _make(val, (a,))
    if out.requires_grad:
        def _back():
            a._accum(out.grad * val)
        out._backward = _back
    return out


def log(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = _make(np.log(a.data), (a,))
    if out.requires_grad:
        def _back():
            a._accum(out.grad / a.data)
        out._backward = _back
    return out


def sqrt(a: Tensor) -> Tensor:
    a = _wrap(a)
    val = np.sqrt(a.data)
    out = _make(val, (a,))
    if out.requires_grad:
        def _back():
            a._accum(out.grad * 0.5 / val)
        out._backward = _back
    return out


def tsum(a: Tensor) -> Tensor:
    a = _wrap(a)
    out = _make(np.asarray(a.data.sum()), (a,))
    if out.requires_grad:
        def _back():
            a._accum(np.full_like(a.data, float(out.grad)))
        out._backward = _back
    return out


def tmean(a: Tensor) -> Tensor:
    n = max(a.data.size, 1)
    return mul(tsum(a), 1.0 / n)


def rowsum(a: Tensor) -> Tensor:
    """[n, c] -> [n]: sum over the second axis."""
    a = _wrap(a)
    if a.data.ndim != 2:
        raise ContractError("rowsum expects a 2-D tensor")
    out = _make(a.data.sum(axis=1), (a,))
    if out.requires_grad:
        def _back():
            a._accum(np.repeat(out.grad[:, None], a.data.shape[1], axis=1))
        out._backward = _back
    return out


def pick(a: Tensor, idx) -> Tensor:
    """[n, c], [n] -> [n]: a[i, idx[i]] per row."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    n = a.data.shape[0]
    if idx.shape != (n,):
        raise ContractError("pick index must be 1-D with one entry per row")
    rows_i = np.arange(n)
    out = _make(a.data[rows_i, idx], (a,))
    if out.requires_grad:
        def _back():
            g = np.zeros_like(a.data)
            np.add.at(g, (rows_i, idx), out.grad)
            a._accum(g)
        out._backward = _back
    return out


def rows(a: Tensor, idx) -> Tensor:
    """[n, c], [k] -> [k, c]: gather whole rows (duplicates allowed)."""
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = _make(a.data[idx], (a,))
    if out.requires_grad:
        def _back():
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a._accum(g)
        out._backward = _back
    return out


def element(a: Tensor, i: int, j: int) -> Tensor:
    """[r, c] -> scalar a[i, j]."""
    a = _wrap(a)
    out = _make(np.asarray(a.data[i, j]), (a,))
    if out.requires_grad:
        def _back():
            g = np.zeros_like(a.data)
            g[i, j] = float(out.grad)
            a._accum(g)
        out._backward = _back
    return out


def column(a: Tensor, j: int) -> Tensor:
    """[r, c] -> [r]: one column."""
    a = _wrap(a)
    out = _make(a.data[:, j].copy(), (a,))
    if out.requires_grad:
        def _back():
            g = np.zeros_like(a.data)
            g[:, j] = out.grad
            a._accum(g)
        out._backward = _back
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = _wrap(a)
    out = _make(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def _back():
            a._accum(out.grad.reshape(a.data.shape))
        out._backward = _back
    return out


def concat_cols(parts: Iterable[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 1."""
    parts = [_wrap(p) for p in parts]
    widths = [p.data.shape[1] for p in parts]
    out = _make(np.concatenate([p.data for p in parts], axis=1), parts)
    if out.requires_grad:
        offsets = np.cumsum([0] + widths)
        def _back():
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                p._accum(out.grad[:, lo:hi])
        out._backward = _back
    return out


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax with log-sum-exp stabilization."""
    a = _wrap(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = _make(p, (a,))
    if out.requires_grad:
        def _back():
            g = out.grad
            dot = (g * p).sum(axis=-1, keepdims=True)
            a._accum(p * (g - dot))
        out._backward = _back
    return out


def lse(a: Tensor) -> Tensor:
    """[n, c] -> [n]: row-wise log-sum-exp, stabilized."""
    a = _wrap(a)
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    val = (m + np.log(s)).ravel()
    out = _make(val, (a,))
    if out.requires_grad:
        sm = e / s
        def _back():
            a._accum(sm * out.grad[:, None])
        out._backward = _back
    return out


def log_softmax(a: Tensor) -> Tensor:
    n = a.data.shape[0]
    return add(a, mul(reshape(lse(a), (n, 1)), -1.0))


def stop_grad(x: Tensor) -> Tensor:
    """Value-equal tensor that cuts the graph (the overcircle operation)."""
    x = _wrap(x)
    return Tensor(x.data, requires_grad=False, stop_gradient=True)


def constant(x) -> Tensor:
    return Tensor(x)


# -- finite-difference oracle -----------------------------------------

def gradcheck(fn, tensors: Sequence[Tensor], eps: float = 1e-5,
              rtol: float = 1e-4, atol: float = 1e-7,
              max_coords: int | None = None,
              rng: np.random.Generator | None = None) -> float:
    """Compare analytic grads of scalar fn() against central differences.

    Returns the worst relative error; raises AssertionError past tolerance.
    """
    for t in tensors:
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]
    worst = 0.0
    for t, an in zip(tensors, analytic):
        flat = t.data.ravel()
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            hi = float(fn().data)
            flat[c] = orig - eps
            lo = float(fn().data)
            flat[c] = orig
            fd = (hi - lo) / (2.0 * eps)
            a = an.ravel()[c]
            err = abs(a - fd)
            denom = max(abs(a), abs(fd))
            rel = err / denom if denom > 0 else 0.0
            worst = max(worst, rel if denom > atol else 0.0)
            if err > atol and rel > rtol:
                raise AssertionError(
                    f"grad mismatch at coord {c}: analytic {a!r} vs fd {fd!r}")
    return worst
