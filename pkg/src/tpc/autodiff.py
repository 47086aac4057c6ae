"""Minimal define-by-run reverse-mode autodiff over dense numpy arrays.

Every op builds a fresh tape node when one of its inputs requires a
gradient. ``Tensor.backward`` walks the tape in reverse topological order
and accumulates gradients additively into the leaves.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

DTYPE = np.float64
LOG_2PI = math.log(2.0 * math.pi)



class _Mode(threading.local):
    # per-thread, so separate tapes on separate threads never share switches
    grad_enabled = True
    dtype = DTYPE


_mode = _Mode()


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording them on the tape."""
    prev = _mode.grad_enabled
    _mode.grad_enabled = False
    try:
        yield
    finally:
        _mode.grad_enabled = prev


@contextlib.contextmanager
def precision(dtype):
    """Create new tensors with ``dtype`` (float64 by default, float32 for fast training)."""
    prev = _mode.dtype
    _mode.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _mode.dtype = prev


def default_dtype():
    return _mode.dtype


@contextlib.contextmanager
def frozen(params):
    """Temporarily treat ``params`` as constants."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    # make numpy defer to Tensor's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_mode.dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    def __len__(self):
        return self.data.shape[0]

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("output is not connected to any tensor requiring grad")
        order = _toposort(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                _check_finite(g, "backward")
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or parent is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _toposort(root):
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
        for p in node._parents:
            if p is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward, op):
    _check_finite(data, op)
    out = Tensor(data)
    if _mode.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        # parents are fixed when the op runs, so later unfreezing cannot leak gradients
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(*shapes, op):
    if len(shapes) == 2 and shapes[0] == shapes[1]:
        return shapes[0]
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {' vs '.join(map(str, shapes))}") from None


# elementwise binary ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, op="add")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, op="sub")

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, op="mul")

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, op="div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return _result(out, (a, b), backward, "div")


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward, "matmul")


# structural ops

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            n != m for i, (n, m) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                out.append(g[tuple(idx)])
            else:
                out.append(None)
        return tuple(out)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape for t in tensors}) != 1:
        raise ShapeError(f"stack: shapes differ {[t.shape for t in tensors]}")

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(parts[i] if t.requires_grad else None for i, t in enumerate(tensors))

    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward, "stack")


def slice_(a, index):
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: {exc}") from None

    def backward(g):
        full = np.zeros_like(a.data)
        if _needs_add_at(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _result(np.array(out, dtype=_mode.dtype), (a,), backward, "slice")


def _needs_add_at(index):
    # fancy (array) indices may repeat positions; basic slices never do
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def broadcast(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    if _broadcast_shape(a.shape, shape, op="broadcast") != shape:
        raise ShapeError(f"broadcast: {a.shape} does not broadcast to {shape}")
    return _result(np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def expand_dims(a, axis):
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.data, axis).shape)


# unary elementwise ops

def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def elu(a):
    a = as_tensor(a)
    # exp(min(x, 0)) is exactly 1 on the positive side, so it doubles as the derivative
    ex = np.exp(np.minimum(a.data, 0.0))
    out = np.maximum(a.data, 0.0) + (ex - 1.0)
    return _result(out, (a,), lambda g: (g * ex,), "elu")


def softplus(a):
    a = as_tensor(a)
    if not np.isfinite(a.data).all():
        raise DomainError("softplus: non-finite input")
    x = a.data
    big = x > 20.0
    out = np.log1p(np.exp(np.minimum(x, 20.0)))
    if big.any():
        out[big] = x[big]
    sig = 0.5 * (np.tanh(0.5 * x) + 1.0)
    return _result(out, (a,), lambda g: (g * sig,), "softplus")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a):
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def clip(a, lo, hi):
    """Clamp with zero gradient outside ``[lo, hi]``."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# reductions

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _result(out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),), "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / max(out.size, 1)
    return _result(out, (a,), lambda g: (_expand_reduced(g / n, a.shape, axis, keepdims).copy(),), "mean")


def logsumexp(a, axis=-1, keepdims=False):
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out_k = m + np.log(total)
    soft = shifted / total
    out = out_k if keepdims else np.squeeze(out_k, axis=axis)

    def backward(g):
        gk = g if keepdims else np.expand_dims(g, axis)
        return (gk * soft,)

    return _result(out, (a,), backward, "logsumexp")


_OPS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "matmul": matmul,
    "concat": concat,
    "stack": stack,
    "slice": slice_,
    "reshape": reshape,
    "transpose": transpose,
    "broadcast": broadcast,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "elu": elu,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "square": square,
    "clip": clip,
    "sum": sum_,
    "mean": mean,
    "logsumexp": logsumexp,
}


def apply(op_name, *inputs, **attrs):
    """Dispatch an op by name, e.g. ``apply("logsumexp", x, axis=0)``."""
    try:
        fn = _OPS[op_name]
    except KeyError:
        raise ContractError(f"unknown op {op_name!r}") from None
    return fn(*inputs, **attrs)


def gaussian_log_prob(x, mean_, log_std):
    """Diagonal Gaussian log-density summed over the last axis."""
    z = (x - mean_) * exp(-log_std)
    return sum_(-0.5 * square(z) - log_std, axis=-1) - 0.5 * LOG_2PI * x.shape[-1]
