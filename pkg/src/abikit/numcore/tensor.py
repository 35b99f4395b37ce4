"""Dense tensors with define-by-run reverse-mode differentiation.

Every op records its parents and a closure that maps the output cotangent to
parent cotangents. ``backward`` walks the recorded tape once, in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_BOUNDARY_EPS = 1e-12
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def backward(self, grad=None) -> None:
        backward(self, grad)


TensorLike = Tensor | np.ndarray | float | int


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        # Python scalars adopt the dtype of whatever they meet.
        return Tensor(np.asarray(x))
    return Tensor(x, dtype=dtype)


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    """Promote a python/numpy scalar operand to the other operand's dtype."""
    if not isinstance(a, Tensor):
        ref = b.dtype if isinstance(b, Tensor) else None
        a = Tensor(np.asarray(a, dtype=ref if np.ndim(a) == 0 else None))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype if np.ndim(b) == 0 else None))
    return a, b


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def broadcast_shape(*shapes: Sequence[int]) -> tuple[int, ...]:
    """Trailing-alignment broadcast of several shapes.

    Raises:
        ValueError: if two aligned extents differ and neither is 1.
    """
    ndim = max((len(s) for s in shapes), default=0)
    result = []
    for axis in range(-ndim, 0):
        extent = 1
        for s in shapes:
            if len(s) + axis < 0:
                continue
            e = s[axis]
            if e == 1:
                continue
            if extent != 1 and e != extent:
                raise ValueError(f"shapes {list(map(tuple, shapes))} are not broadcastable")
            extent = e
        result.append(extent)
    return tuple(result)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- binary elementwise ---------------------------------------------------------
def _binary(a, b, fwd, da, db) -> Tensor:
    a, b = _coerce_pair(a, b)
    broadcast_shape(a.shape, b.shape)
    out = fwd(a.data, b.data)

    def back(g):
        ga = _unbroadcast(da(g, a.data, b.data, out), a.shape) if a.requires_grad else None
        gb = _unbroadcast(db(g, a.data, b.data, out), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back)


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a, b, np.divide, lambda g, x, y, o: g / y, lambda g, x, y, o: -g * x / (y * y)
    )


def maximum(a, b) -> Tensor:
    return _binary(
        a,
        b,
        np.maximum,
        lambda g, x, y, o: g * (x >= y),
        lambda g, x, y, o: g * (x < y),
    )


# -- unary elementwise ------------------------------------------------------------
def _unary(x, fwd, dfn) -> Tensor:
    x = as_tensor(x)
    out = fwd(x.data)
    return _make(out, (x,), lambda g: (dfn(g, x.data, out),))


def neg(x) -> Tensor:
    return _unary(x, np.negative, lambda g, x, o: -g)


def exp(x) -> Tensor:
    return _unary(x, np.exp, lambda g, x, o: g * o)


def log(x) -> Tensor:
    return _unary(x, np.log, lambda g, x, o: g / np.maximum(x, _BOUNDARY_EPS))


def sqrt(x) -> Tensor:
    return _unary(x, np.sqrt, lambda g, x, o: g * 0.5 / np.maximum(o, _BOUNDARY_EPS))


def square(x) -> Tensor:
    return _unary(x, np.square, lambda g, x, o: 2 * g * x)


def power(x, exponent: float) -> Tensor:
    return _unary(
        x, lambda v: v**exponent, lambda g, v, o: g * exponent * v ** (exponent - 1)
    )


def abs_(x) -> Tensor:
    return _unary(x, np.abs, lambda g, x, o: g * np.sign(x))


def tanh(x) -> Tensor:
    return _unary(x, np.tanh, lambda g, x, o: g * (1 - o * o))


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * v) + 1)


def sigmoid(x) -> Tensor:
    return _unary(x, _sigmoid, lambda g, x, o: g * o * (1 - o))


def softplus(x) -> Tensor:
    return _unary(x, lambda v: np.logaddexp(0, v), lambda g, x, o: g * _sigmoid(x))


def softplus_inverse(x) -> Tensor:
    """ln(exp(x) - 1), stable for large x; gradient clamped near x = 0."""

    def fwd(v):
        v = np.maximum(v, _BOUNDARY_EPS)
        return v + np.log(-np.expm1(-v))

    def dfn(g, v, o):
        v = np.maximum(v, _BOUNDARY_EPS)
        return g / -np.expm1(-v)

    return _unary(x, fwd, dfn)


def relu(x) -> Tensor:
    return _unary(x, lambda v: np.maximum(v, 0), lambda g, x, o: g * (x > 0))


_SQRT1_2 = 1 / np.sqrt(2)
_INV_SQRT_2PI = 1 / np.sqrt(2 * np.pi)


def gelu(x) -> Tensor:
    """Exact (erf-based) GELU."""

    def fwd(v):
        return 0.5 * v * (1 + erf(v * _SQRT1_2))

    def dfn(g, v, o):
        cdf = 0.5 * (1 + erf(v * _SQRT1_2))
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        return g * (cdf + v * pdf)

    return _unary(x, fwd, dfn)


def where(cond: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is not differentiated."""
    a, b = _coerce_pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def back(g):
        ga = _unbroadcast(np.where(cond, g, 0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(cond, 0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back)


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "maximum": maximum,
    "neg": neg,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "square": square,
    "abs": abs_,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "softplus_inverse": softplus_inverse,
    "relu": relu,
    "gelu": gelu,
}


def elementwise(op_kind: str, *inputs) -> Tensor:
    """Apply a named elementwise op, e.g. ``elementwise("add", a, b)``."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs)


# -- reductions -------------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(out), (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return sum_(x, axes, keepdims) * (1.0 / count)


def max_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out_k = x.data.max(axis=axes, keepdims=True)
    out = out_k if keepdims else np.squeeze(out_k, axis=axes)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        hit = x.data == out_k
        return (g * hit / hit.sum(axis=axes, keepdims=True),)

    return _make(np.asarray(out), (x,), back)


def logsumexp(x, axis: int = -1, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    m = x.data.max(axis=axis, keepdims=True)
    s = np.exp(x.data - m).sum(axis=axis, keepdims=True)
    out_k = m + np.log(s)
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * np.exp(x.data - out_k),)

    return _make(out, (x,), back)


def log_softmax(x, axis: int = -1) -> Tensor:
    return sub(x, logsumexp(x, axis=axis, keepdims=True))


# -- shape manipulation ---------------------------------------------------------------
def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x, a: int, b: int) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.data, a, b)
    return _make(out, (x,), lambda g: (np.swapaxes(g, a, b),))


def expand_dims(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return reshape(x, np.expand_dims(x.data, axis).shape)


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    out = np.broadcast_to(x.data, shape)
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.asarray(out), (x,), back)


def concatenate(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, ts, back)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, ts, back)


# -- linear algebra ---------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product with batched leading dims broadcast.

    Raises:
        ValueError: on inner-dimension mismatch.
    """
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least two dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), back)


# -- reverse pass -----------------------------------------------------------------------
def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order


def _run_backward(root: Tensor, seed: np.ndarray) -> dict[int, np.ndarray]:
    grads: dict[int, np.ndarray] = {id(root): seed}
    for node in reversed(_topological_order(root)):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def _check_scalar(loss: Tensor, grad) -> np.ndarray:
    if grad is None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        return np.ones_like(loss.data)
    return np.asarray(grad, dtype=loss.dtype).reshape(loss.shape)


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    seed = _check_scalar(loss, grad)
    if not loss.requires_grad:
        return
    grads = _run_backward(loss, seed)
    for node in _topological_order(loss):
        if node._backward is None and id(node) in grads:
            g = np.asarray(grads[id(node)], dtype=node.dtype)
            node.grad = g if node.grad is None else node.grad + g


def grad(loss: Tensor, inputs: Iterable[Tensor], grad_output=None) -> list[np.ndarray]:
    """Functional gradients of ``loss`` w.r.t. ``inputs``; unreachable inputs get zeros."""
    inputs = list(inputs)
    seed = _check_scalar(loss, grad_output)
    grads = _run_backward(loss, seed) if loss.requires_grad else {}
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.dtype).reshape(t.shape))
    return out
