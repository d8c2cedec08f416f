"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Every op returns a new :class:`Tensor` holding its forward value and, when
gradients are being recorded, a closure that maps the output gradient to
gradients of its inputs. ``Tensor.backward`` walks the graph in reverse
topological order and accumulates into ``.grad``.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

_dtype = np.float32
_grad_enabled = True


class ShapeError(ValueError):
    def __init__(self, op: str, a: tuple, b: tuple):
        super().__init__(f"{op}: incompatible shapes {a} and {b}")
        self.op, self.shapes = op, (a, b)


def get_default_dtype():
    return _dtype


def set_default_dtype(dtype) -> None:
    global _dtype
    _dtype = np.dtype(dtype).type


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default float type (``np.float64`` for gradient checks)."""
    prev = _dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating) or arr.dtype != _dtype:
            arr = arr.astype(_dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    node.grad = None  # free interior gradients

    # -- operators -----------------------------------------------------------

    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return add(self, neg(_lift(o)))

    def __rsub__(self, o):
        return add(_lift(o), neg(self))

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == _dtype or not np.issubdtype(data.dtype, np.floating) else data.astype(_dtype)
    out.grad = None
    out.name = None
    live = [p for p in parents if p.requires_grad]
    out.requires_grad = _grad_enabled and bool(live)
    out._parents = tuple(live) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("multiply", a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("divide", a.data, b.data)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: a._accum(-g))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: a._accum(g * out))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: a._accum(g * mask))


def leaky_relu(a: Tensor, alpha: float = 0.2) -> Tensor:
    slope = np.where(a.data > 0, 1.0, alpha).astype(a.data.dtype)
    return _result(a.data * slope, (a,), lambda g: a._accum(g * slope))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        a._accum(g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner))

    return _result(out, (a,), backward)


# -- shape ops ---------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                b._accum(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accum(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _result(out, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(src)))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ValueError(f"invalid transpose axes {axes} for {a.ndim}-d tensor")
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: a._accum(np.transpose(g, inv)))


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    nd = tensors[0].ndim
    if not -nd <= axis < nd:
        raise ValueError(f"invalid axis {axis} for {nd}-d tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", tensors[0].shape, next(t.shape for t in tensors if t.shape != tensors[0].shape)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accum(np.take(g, np.arange(lo, hi), axis=axis))

    return _result(out, tensors, backward)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic slicing (slices, ints, ``None``, ``...``)."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        a._accum(full)

    return _result(np.array(out), (a,), backward)


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with integer ``indices`` of any shape (embedding lookup for axis 0)."""
    indices = np.asarray(indices, dtype=np.int64)
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"invalid axis {axis} for {a.ndim}-d tensor")
    axis = axis % a.ndim
    if indices.size and (indices.min() < -a.shape[axis] or indices.max() >= a.shape[axis]):
        raise IndexError(f"index out of range for axis of size {a.shape[axis]}")
    out = np.take(a.data, indices, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(full, indices.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        else:
            moved = np.moveaxis(full, axis, 0)
            gm = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
            np.add.at(moved, indices.reshape(-1), gm.reshape((-1,) + moved.shape[1:]))
        a._accum(full)

    return _result(out, (a,), backward)


embedding = take


def index_add(num: int, index, src: Tensor) -> Tensor:
    """Scatter-add rows of ``src`` into a fresh ``(num, *src.shape[1:])`` tensor."""
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1 or len(index) != src.shape[0]:
        raise ShapeError("index_add", index.shape, src.shape)
    if index.size and (index.min() < 0 or index.max() >= num):
        raise IndexError(f"scatter index out of range [0, {num})")
    out = np.zeros((num,) + src.shape[1:], dtype=src.data.dtype)
    np.add.at(out, index, src.data)
    return _result(out, (src,), lambda g: src._accum(g[index]))


def grouped_matmul(x: Tensor, group, w: Tensor) -> Tensor:
    """Row-wise ``out[i] = x[i] @ w[group[i]]`` for a stack of matrices ``w`` of shape (G, din, dout)."""
    group = np.asarray(group, dtype=np.int64)
    if x.ndim != 2 or w.ndim != 3 or x.shape[1] != w.shape[1] or len(group) != x.shape[0]:
        raise ShapeError("grouped_matmul", x.shape, w.shape)
    if group.size and (group.min() < 0 or group.max() >= w.shape[0]):
        raise ValueError(f"group id out of range [0, {w.shape[0]})")
    out = np.zeros((x.shape[0], w.shape[2]), dtype=x.data.dtype)
    parts = [(gid, np.nonzero(group == gid)[0]) for gid in np.unique(group)]
    for gid, rows in parts:
        out[rows] = x.data[rows] @ w.data[gid]

    def backward(g):
        if x.requires_grad:
            gx = np.zeros_like(x.data)
            for gid, rows in parts:
                gx[rows] = g[rows] @ w.data[gid].T
            x._accum(gx)
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for gid, rows in parts:
                gw[gid] = x.data[rows].T @ g[rows]
            w._accum(gw)

    return _result(out, (x, w), backward)


# -- reductions --------------------------------------------------------------


def _check_axis(a: Tensor, axis) -> None:
    if axis is None:
        return
    for ax in axis if isinstance(axis, tuple) else (axis,):
        if not -a.ndim <= ax < a.ndim:
            raise ValueError(f"invalid axis {ax} for {a.ndim}-d tensor")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_axis(a, axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    _check_axis(a, axis)
    if axis is None:
        n = a.data.size
    else:
        n = int(np.prod([a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis(a, axis)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _result(out, (a,), backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    _check_axis(a, axis)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        a._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _result(out, (a,), backward)


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-6) -> Tensor:
    """``x / sqrt(mean(x**2, -1) + eps) * weight`` over the last axis."""
    if weight.shape != x.shape[-1:]:
        raise ShapeError("rms_norm", x.shape, weight.shape)
    r = 1.0 / np.sqrt((x.data * x.data).mean(axis=-1, keepdims=True) + eps)
    n = x.data * r
    out = n * weight.data

    def backward(g):
        if weight.requires_grad:
            weight._accum((g * n).reshape(-1, x.shape[-1]).sum(axis=0))
        if x.requires_grad:
            gn = g * weight.data
            x._accum(r * (gn - n * (gn * n).mean(axis=-1, keepdims=True)))

    return _result(out, (x, weight), backward)


def dropout(a: Tensor, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when ``train`` is false or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return _result(a.data * keep, (a,), lambda g: a._accum(g * keep))


def cross_entropy(logits: Tensor, targets, ignore_id: int | None = None, weights=None) -> Tensor:
    """Token-level cross-entropy of ``logits`` (N, V) against integer ``targets`` (N,).

    Without ``weights`` the loss is the mean over non-ignored rows; with
    ``weights`` it is ``sum(weights * nll)`` over non-ignored rows.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    valid = np.ones(len(targets), dtype=bool) if ignore_id is None else targets != ignore_id
    if weights is None:
        count = max(int(valid.sum()), 1)
        w = valid.astype(np.float64) / count
    else:
        w = np.asarray(weights, dtype=np.float64) * valid
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    safe_t = np.where(valid, targets, 0)
    nll = lse - z[np.arange(len(targets)), safe_t]
    loss = np.asarray((w * nll).sum())

    def backward(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(len(targets)), safe_t] -= 1.0
        logits._accum((p * (w * g)[:, None]).astype(logits.data.dtype))

    return _result(loss.astype(logits.data.dtype), (logits,), backward)
