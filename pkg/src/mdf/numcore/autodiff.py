"""Reverse-mode differentiation over dense numpy arrays.

A :class:`Tensor` wraps an ``ndarray`` and records the operation that produced
it together with a closure mapping the output gradient to one gradient per
parent. Calling :func:`backward` on a scalar walks the recorded graph in
reverse topological order. Nodes that the loss does not depend on are never
visited, so they are pruned implicitly.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class NonFiniteError(FloatingPointError):
    """A forward value or gradient contains NaN or Inf."""


def as_array(x, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Convert ``x`` to a C-contiguous float array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("array contains non-finite values")
    return arr


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad")

    def __init__(self, data, parents=(), backward_fn=None, op="const", requires_grad=False):
        if isinstance(data, np.generic):
            data = np.asarray(data)
        elif not isinstance(data, np.ndarray):
            data = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = data
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @classmethod
    def leaf(cls, data, dtype=None) -> "Tensor":
        arr = np.array(data, dtype=dtype or getattr(data, "dtype", DEFAULT_DTYPE), copy=True)
        return cls(arr, op="leaf", requires_grad=True)

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    dtype = property(lambda self: self.data.dtype)

    def __len__(self):
        return len(self.data)

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape}, dtype={self.data.dtype})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __pow__ = lambda self, e: power(self, e)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __getitem__ = lambda self, idx: take_rows(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _wrap(b, a)
    if isinstance(b, Tensor):
        return _wrap(a, b), b
    return _wrap(a), _wrap(b)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _node(data, parents, backward_fn, op) -> Tensor:
    if not any(p.requires_grad for p in parents):
        return Tensor(data, op=op)
    return Tensor(data, parents, backward_fn, op)


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward, "div")


def neg(a) -> Tensor:
    a = _wrap(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    """``a ** exponent`` for a constant real exponent."""
    a = _wrap(a)
    exponent = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data ** exponent

    def backward(g):
        if exponent == 0.0:
            return (np.zeros_like(a.data),)
        with np.errstate(divide="ignore", invalid="ignore"):
            local = exponent * a.data ** (exponent - 1.0)
        # subgradient 0 where the base vanishes and the power is non-smooth
        local = np.where(a.data == 0, 0.0 if exponent < 1 else local, local).astype(a.data.dtype)
        return (g * local,)

    return _node(out, (a,), backward, "pow")


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _node(out, (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    """Square root whose gradient at 0 is taken as 0 (the minimiser of a norm)."""
    a = _wrap(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            local = np.where(out > 0, 0.5 / out, 0.0).astype(out.dtype)
        return (g * local,)

    return _node(out, (a,), backward, "sqrt")


def abs_(a) -> Tensor:
    a = _wrap(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0).astype(a.data.dtype), (a,),
                 lambda g: (g * mask,), "relu")


# reductions and shape

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)

    return _node(np.asarray(out, dtype=a.data.dtype), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = _wrap(a)
    return _node(a.data.T, (a,), lambda g: (g.T,), "transpose")


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def take_rows(a, idx) -> Tensor:
    """Basic or fancy indexing ``a[idx]``; repeated indices accumulate on the way back."""
    a = _wrap(a)
    if isinstance(idx, list):
        idx = np.asarray(idx)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward, "take_rows")


def pick(a, labels) -> Tensor:
    """``a[i, labels[i]]`` for every row ``i`` of a 2-D tensor."""
    a = _wrap(a)
    labels = np.asarray(labels)
    rows = np.arange(a.shape[0])

    def backward(g):
        out = np.zeros_like(a.data)
        out[rows, labels] = g
        return (out,)

    return _node(a.data[rows, labels], (a,), backward, "pick")


def sort(a, axis=0) -> Tensor:
    """Sort along ``axis``. The permutation found on the forward pass is held
    fixed for the backward pass, which is the exact gradient almost everywhere."""
    a = _wrap(a)
    order = np.argsort(a.data, axis=axis, kind="stable")

    def backward(g):
        out = np.empty_like(a.data)
        np.put_along_axis(out, order, g, axis=axis)
        return (out,)

    return _node(np.take_along_axis(a.data, order, axis=axis), (a,), backward, "sort")


def log_softmax(a, axis=-1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), backward, "log_softmax")


def softmax(a, axis=-1) -> Tensor:
    return exp(log_softmax(a, axis))


# graph traversal

def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def first_non_finite(root: Tensor) -> Tensor | None:
    """Earliest node in forward order whose value is NaN/Inf."""
    for node in _topo_order(root):
        if not np.all(np.isfinite(node.data)):
            return node
    return None


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every reachable node."""
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar, got shape {root.shape}")
    if not np.isfinite(root.data).all():
        bad = first_non_finite(root)
        where = f"op '{bad.op}' with output shape {bad.shape}" if bad is not None else "input"
        raise NonFiniteError(f"non-finite loss; first non-finite value produced by {where}")
    order = _topo_order(root)
    grads = {id(root): np.ones_like(root.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.op == "leaf":
            node.grad = g if node.grad is None else node.grad + g
            continue
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=parent.data.dtype).reshape(parent.shape)
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def value_and_grad(fn: Callable, params: Sequence, has_aux: bool = False, dtype=None):
    """Evaluate ``fn(*leaves)`` and return ``(value, grads)``.

    ``params`` are arrays; each becomes a fresh leaf. If ``has_aux`` the
    function returns ``(scalar_tensor, aux)`` and the result is
    ``((scalar_tensor, aux), grads)``. Parameters the scalar does not depend
    on receive all-zero gradients.
    """
    leaves = [Tensor.leaf(p, dtype=dtype) for p in params]
    out = fn(*leaves)
    loss = out[0] if has_aux else out
    if not isinstance(loss, Tensor):
        loss = Tensor(np.asarray(loss))
    backward(loss)
    grads = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]
    return out, grads


def grad(loss_fn: Callable, params: Sequence, dtype=None) -> list[np.ndarray]:
    """Gradients of the scalar ``loss_fn(*params)`` with respect to each parameter."""
    return value_and_grad(loss_fn, params, dtype=dtype)[1]
