"""Dense float64 tensors with a reverse-mode gradient tape.

Every op returns a new ``Tensor`` whose ``_backward`` closure pushes the
upstream gradient to its parents.  Values are checked for NaN/Inf after
each op so numeric corruption surfaces at the op that produced it.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    """Raised when an op produces (or is handed) a non-finite value."""


class GraphError(RuntimeError):
    """Raised on misuse of the gradient tape."""


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _check_finite(data: np.ndarray, where: str) -> None:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {where}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64, copy=True)
        _check_finite(arr, "construction")
        self._init(arr, requires_grad, (), "leaf")

    def _init(self, arr: np.ndarray, requires_grad: bool, parents: tuple, op: str) -> None:
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = op
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar; each maps to a module-level op
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
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)))


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the tape."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _make(data: np.ndarray, parents: Iterable[Tensor], op: str, backward_fn) -> Tensor:
    parents = tuple(parents)
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    data = np.asarray(data, dtype=np.float64)
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out._init(data, needs, parents if needs else (), op)
    if needs:
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from exc


# ----------------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        _accumulate(x, g * c)

    return _make(x.data * c, (x,), "scale", bw)


_relu_log: list[np.ndarray] | None = None


@contextlib.contextmanager
def record_relu_patterns():
    """Collect the on/off mask of every ``relu`` evaluated inside the block.

    Two evaluations with equal logs ran on the same smooth branch of the
    network, which is what makes a finite difference between them valid.
    """
    global _relu_log
    prev, _relu_log = _relu_log, []
    log = _relu_log
    try:
        yield log
    finally:
        _relu_log = prev


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _relu_log is not None:
        _relu_log.append(mask)

    def bw(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), "relu", bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    # tanh approximation
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    th = np.tanh(u)
    out = 0.5 * x.data * (1.0 + th)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        d = 0.5 * (1.0 + th) + 0.5 * x.data * (1.0 - th**2) * du
        _accumulate(x, g * d)

    return _make(out, (x,), "gelu", bw)


# ----------------------------------------------------------------------------
# linear algebra and layout
# ----------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands with ndim >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: cannot broadcast {a.shape} @ {b.shape}") from exc

    def bw(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), "matmul", bw)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return swapaxes(x, -1, -2)


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    def bw(g):
        _accumulate(x, np.swapaxes(g, a1, a2))

    return _make(np.ascontiguousarray(np.swapaxes(x.data, a1, a2)), (x,), "swapaxes", bw)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        _accumulate(x, np.transpose(g, inverse))

    return _make(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), "permute", bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from exc

    def bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(out, (x,), "reshape", bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("concat of an empty list")
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def bw(g):
        for t, piece in zip(xs, np.split(g, bounds, axis=axis)):
            _accumulate(t, piece)

    return _make(out, xs, "concat", bw)


def take(x: Tensor, index) -> Tensor:
    """Basic or advanced indexing; gradient scatters back with add.at."""
    out = np.array(x.data[index], dtype=np.float64, copy=True)

    idx = index if isinstance(index, tuple) else (index,)
    advanced = any(isinstance(i, (list, np.ndarray)) for i in idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if advanced:
            np.add.at(full, index, g)
        else:
            full[index] += g
        _accumulate(x, full)

    return _make(out, (x,), "take", bw)


# ----------------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------------


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(np.asarray(out, dtype=np.float64), (x,), "sum", bw)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# ----------------------------------------------------------------------------
# fused ops with hand-derived backward
# ----------------------------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (x,), "softmax", bw)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    return softmax(x, axis=-1)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale by ``gamma`` and shift by ``beta``."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must have shape ({d},), got {gamma.shape}, {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            dx = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            _accumulate(x, dx)

    return _make(out, (x, gamma, beta), "layer_norm", bw)


# ----------------------------------------------------------------------------
# tape
# ----------------------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
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


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    A graph can be walked once; intermediate gradients are released
    afterwards and a second call raises ``GraphError``.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward on a tensor with no recorded graph (detached or constant)")
    if loss._consumed:
        raise GraphError("backward already ran on this graph; rebuild it with a fresh forward pass")

    order = _topological(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if node._backward is not None:
            # interior node: drop its gradient and closure
            node.grad = None
            node._backward = None
            node._consumed = True
    for node in order:
        if node.grad is not None:
            _check_finite(node.grad, "backward")
