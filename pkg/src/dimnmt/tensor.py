"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every model equation in the package is written against :class:`Tensor`.
A graph is recorded while grad mode is on (the default); calling
:meth:`Tensor.backward` on a scalar walks that graph in reverse topological
order and accumulates ``.grad`` on every leaf created with
``requires_grad=True``.

Broadcasting rule for binary ops: either both operands have the same rank
(axes of size 1 stretch), or the lower-rank operand equals the trailing axes
of the other exactly (a bias vector added to a batch, say).  Anything else,
e.g. ``(n,) + (n, 1)``, raises :class:`DimensionError` instead of silently
forming an outer sum.  Python scalars always broadcast.
"""

from __future__ import annotations

import contextlib
import os
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "DomainError",
    "no_grad",
    "grad_enabled",
    "set_debug",
    "tensor",
    "concat",
    "stack",
    "matmul",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "clip_global_norm",
    "global_norm",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """A value lies outside an operation's domain (debug mode only)."""


_state = threading.local()
_DEBUG = os.environ.get("DIMNMT_DEBUG", "") not in ("", "0")


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in this thread."""
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


def set_debug(flag: bool) -> None:
    """Toggle NaN/Inf checks on every op output and domain checks for ``log``."""
    global _DEBUG
    _DEBUG = bool(flag)


def _check_broadcast(a: tuple, b: tuple, op: str) -> None:
    if a == b:
        return
    if len(a) == len(b):
        for x, y in zip(a, b):
            if x != y and x != 1 and y != 1:
                raise DimensionError(f"{op}: cannot broadcast shapes {a} and {b}")
        return
    short, long_ = (a, b) if len(a) < len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise DimensionError(
            f"{op}: shapes {a} and {b} differ in rank and the shorter is not a trailing match"
        )


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, backward) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.name = None
        if _DEBUG and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite value produced by tensor op")
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- arithmetic -------------------------------------------------------------

    def _binary(self, other, fwd, dself, dother, op):
        if not isinstance(other, Tensor):
            c = np.asarray(other, dtype=np.float64)
            if c.ndim:
                _check_broadcast(self.shape, c.shape, op)
            data = fwd(self.data, c)
            shape = self.shape

            def backward(g):
                return (_unbroadcast(dself(g, self.data, c, data), shape),)

            return Tensor._make(data, (self,), backward)
        _check_broadcast(self.shape, other.shape, op)
        a, b = self.data, other.data
        data = fwd(a, b)

        def backward(g):
            ga = _unbroadcast(dself(g, a, b, data), a.shape) if self.requires_grad else None
            gb = _unbroadcast(dother(g, a, b, data), b.shape) if other.requires_grad else None
            return ga, gb

        return Tensor._make(data, (self, other), backward)

    def __add__(self, other):
        return self._binary(other, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g, "add")

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g, "sub")

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        return self._binary(
            other, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a, "mul"
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binary(
            other,
            np.divide,
            lambda g, a, b, o: g / b,
            lambda g, a, b, o: -g * a / (b * b),
            "div",
        )

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p: float):
        x = self.data
        return Tensor._make(x**p, (self,), lambda g: (g * p * x ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops --------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = tuple(np.argsort(axes))
        return Tensor._make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),))

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._make(
            self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),)
        )

    def __getitem__(self, idx) -> "Tensor":
        if isinstance(idx, Tensor):
            raise TypeError("index with integer arrays, not Tensors")
        shape = self.shape
        advanced = _is_advanced(idx)

        def backward(g):
            out = np.zeros(shape)
            if advanced:
                np.add.at(out, idx, g)
            else:
                out[idx] = g
            return (out,)

        return Tensor._make(self.data[idx], (self,), backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(np.asarray(data), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- autodiff ---------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf requiring grad."""
        if self.size != 1:
            raise ValueError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        tape = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _is_advanced(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(p, (list, np.ndarray)) for p in parts)


def _topological_order(root: Tensor) -> list[Tensor]:
    """Parents-before-children ordering of the recorded graph under ``root``."""
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b) -> Tensor:
    """Matrix product; 1-D operands are treated as row/column vectors.

    Leading axes of an N-D left operand are batch axes; a 2-D right operand is
    shared across them.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim == 1:
        return matmul(a.reshape(1, -1), b).reshape(-1) if b.ndim == 2 else (a * b).sum()
    if b.ndim == 1:
        return matmul(a, b.reshape(-1, 1)).reshape(a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch axes differ for {a.shape} and {b.shape}")
    x, y = a.data, b.data
    data = np.matmul(x, y)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(y, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if y.ndim == 2 and x.ndim > 2:
                gb = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(np.swapaxes(x, -1, -2), g)
        return ga, gb

    return Tensor._make(data, (a, b), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return Tensor._make(data, tuple(ts), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(len(ts))]

    return Tensor._make(data, tuple(ts), backward)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor._make(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    d = x.data
    if _DEBUG and np.any(d <= 0):
        raise DomainError("log of non-positive value")
    return Tensor._make(np.log(d), (x,), lambda g: (g / d,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(out, (x,), backward)


def global_norm(tensors: Iterable[Tensor]) -> float:
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    return float(np.sqrt(total))


def clip_global_norm(tensors: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the scale factor that was applied (1.0 when nothing changed).
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    tensors = list(tensors)
    norm = global_norm(tensors)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for t in tensors:
        if t.grad is not None:
            t.grad *= scale
    return scale
