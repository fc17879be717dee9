"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every primitive returns a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent.  Calling
:meth:`Tensor.backward` on a scalar walks the recorded graph in reverse
topological order and accumulates ``grad`` on every leaf that requires it.

Broadcasting is deliberately narrow: elementwise ops accept equal shapes or a
0-d operand.  Wider broadcasts (bias rows, per-feature thresholds) live inside
the dedicated primitives that need them.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

_DTYPE = np.float64

# Active kink recorders.  Ops with non-differentiable points append the
# boolean region pattern of their input so finite-difference probes can tell
# when a perturbation crossed a kink.
_KINK_RECORDERS: list[list[np.ndarray]] = []


@contextmanager
def record_kinks():
    """Collect region masks emitted by ``abs``/``relu``/``soft_threshold``."""
    log: list[np.ndarray] = []
    _KINK_RECORDERS.append(log)
    try:
        yield log
    finally:
        _KINK_RECORDERS.pop()


def _note_kink(pattern: np.ndarray) -> None:
    if _KINK_RECORDERS:
        _KINK_RECORDERS[-1].append(pattern)


class ShapeError(ValueError):
    """Raised when operand shapes do not fit the named primitive."""

    def __init__(self, op: str, message: str):
        super().__init__(f"{op}: {message}")
        self.op = op


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        """Wrap the result of a custom primitive.

        ``backward(g)`` must return one array (or ``None``) per parent, each
        shaped like that parent's data.
        """
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=_DTYPE)
        out.grad = None
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- autodiff -----------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError("backward", f"output must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(op: str, a, b) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(op, f"shapes {a.shape} and {b.shape} differ (only scalar broadcasting is supported)")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    # only the 0-d case reaches here
    return np.asarray(g.sum()).reshape(shape)


# -- elementwise ----------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _pair("add", a, b)
    return Tensor.from_op(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair("sub", a, b)
    return Tensor.from_op(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair("mul", a, b)
    return Tensor.from_op(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    return expit(x)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = sigmoid_array(a.data)
    return Tensor.from_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return Tensor.from_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return Tensor.from_op(y, (a,), lambda g: (g * y,), "exp")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    _note_kink(mask)
    return Tensor.from_op(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tabs(a) -> Tensor:
    """Absolute value; subgradient 0 at the origin."""
    a = as_tensor(a)
    sign = np.sign(a.data)
    _note_kink(sign)
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def soft_threshold(x, tau) -> Tensor:
    """Shrink ``x`` toward zero by ``tau``; zero inside ``[-tau, tau]``.

    ``tau`` may be 0-d, shaped like ``x``, shaped like the last axis of ``x``
    (one threshold per feature), or shaped ``(B, F)`` for ``x`` of shape
    ``(B, S, F)`` (one threshold per sample and feature, shared along S).
    """
    x, tau = as_tensor(x), as_tensor(tau)
    t = tau.data
    if np.any(t < 0):
        raise ValueError("soft_threshold: tau must be non-negative")
    if tau.ndim == 0 or tau.shape == x.shape:
        expand, reduce_axes = (lambda v: v), None
    elif tau.shape == x.shape[-1:]:
        expand = lambda v: v
        reduce_axes = tuple(range(x.ndim - 1))
    elif x.ndim == 3 and tau.shape == (x.shape[0], x.shape[2]):
        expand = lambda v: v[:, None, :]
        reduce_axes = (1,)
    else:
        raise ShapeError("soft_threshold", f"tau shape {tau.shape} does not fit x shape {x.shape}")
    tb = expand(t)
    upper = x.data > tb
    lower = x.data < -tb
    region = upper.astype(np.int8) - lower.astype(np.int8)
    _note_kink(region)
    y = np.where(upper, x.data - tb, np.where(lower, x.data + tb, 0.0))

    def backward(g):
        gx = g * (upper | lower)
        gt = g * region * -1.0
        if tau.ndim == 0:
            gt = np.asarray(gt.sum())
        elif reduce_axes is not None:
            gt = gt.sum(axis=reduce_axes)
        return gx, gt

    return Tensor.from_op(y, (x, tau), backward, "soft_threshold")


# -- linear algebra -------------------------------------------------------
def matmul(a, b) -> Tensor:
    """``a @ b`` for ``b`` 2-D (shared weights) or equal batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul", "operands must be at least 1-D")
    if b.ndim == 2 and a.ndim >= 1:
        if a.shape[-1] != b.shape[0]:
            raise ShapeError("matmul", f"inner dimensions {a.shape} @ {b.shape} differ")

        def backward(g):
            ga = g @ b.data.T
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, b.shape[1])
            return ga, gb

        return Tensor.from_op(a.data @ b.data, (a, b), backward, "matmul")
    if a.ndim == b.ndim and a.ndim >= 2 and a.shape[:-2] == b.shape[:-2]:
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError("matmul", f"inner dimensions {a.shape} @ {b.shape} differ")

        def backward(g):
            return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

        return Tensor.from_op(a.data @ b.data, (a, b), backward, "bmm")
    raise ShapeError("matmul", f"unsupported operand shapes {a.shape} @ {b.shape}")


def linear(x, w, b=None) -> Tensor:
    """Dense layer ``x @ w + b`` applied along the last axis of ``x``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("dense", f"input {x.shape} does not match weight {w.shape}")
    if b is None:
        return matmul(x, w)
    b = as_tensor(b)
    if b.shape != (w.shape[1],):
        raise ShapeError("dense", f"bias shape {b.shape} does not match weight {w.shape}")
    x2 = x.data.reshape(-1, w.shape[0])

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        return (g @ w.data.T, x2.T @ g2, g2.sum(axis=0))

    return Tensor.from_op(x.data @ w.data + b.data, (x, w, b), backward, "dense")


# -- reductions and shape ops ------------------------------------------------
def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    y = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return Tensor.from_op(y, (a,), backward, "sum")


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    if n == 0:
        raise ShapeError("mean", "cannot average over an empty axis")
    y = a.data.mean(axis=axis)

    def backward(g):
        if axis is None:
            return (np.full(a.shape, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape) / n,)

    return Tensor.from_op(y, (a,), backward, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        y = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError("reshape", str(exc)) from None
    return Tensor.from_op(y, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    y = a.data[index]

    basic = all(isinstance(i, (int, slice, type(Ellipsis), type(None)))
                for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return Tensor.from_op(np.array(y), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor.from_op(y, tensors, backward, "concat")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(y, (a,), backward, "softmax")


def constant_matmul_last(a, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed linear operator ``matrix`` along ``axis`` of ``a``."""
    a = as_tensor(a)
    n = a.shape[axis]
    if matrix.shape != (n, n):
        raise ShapeError("linear_operator", f"operator {matrix.shape} does not fit axis length {n}")
    moved = np.moveaxis(a.data, axis, -1)
    y = np.moveaxis(moved @ matrix.T, -1, axis)

    def backward(g):
        gm = np.moveaxis(g, axis, -1) @ matrix
        return (np.moveaxis(gm, -1, axis),)

    return Tensor.from_op(y, (a,), backward, "linear_operator")
