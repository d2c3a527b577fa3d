"""Tape-style reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`Node` wraps an immutable array value. Operations on nodes record a
backward closure whenever any input requires a gradient; :meth:`Node.backward`
walks the recorded graph in reverse topological order.

Gradients accumulate into ``Node.grad`` across repeated ``backward`` calls;
callers reset them with :func:`zero_grad` between optimisation steps.
Double-backward is not supported.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


def as_array(x) -> Array:
    arr = np.asarray(x, dtype=np.float64)
    if arr.dtype != np.float64:
        arr = arr.astype(np.float64)
    return arr


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = as_array(value)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Node, ...] = ()
        self._backward: Callable[[Array], Sequence[Array | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Node{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> Array:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        if self.value.shape != ():
            raise ValueError(f"backward() needs a scalar root, got shape {self.value.shape}")
        order = _topological_order(self)
        grads: dict[int, Array] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
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

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        if isinstance(other, Node):
            return multiply(self, power(other, -1.0))
        return multiply(self, 1.0 / float(other))

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def constant(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def parameter(x, name: str | None = None) -> Node:
    return Node(x, requires_grad=True, name=name)


def zero_grad(params: Iterable[Node]) -> None:
    for p in params:
        p.grad = None


def _make(value: Array, parents: tuple[Node, ...], backward) -> Node:
    out = Node(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.value + b.value, (a, b), backward)


def subtract(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "subtract")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.value - b.value, (a, b), backward)


def multiply(a, b) -> Node:
    a, b = constant(a), constant(b)
    _broadcast_shape(a, b, "multiply")

    def backward(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.value * b.value, (a, b), backward)


def exp(a) -> Node:
    a = constant(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = constant(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def power(a, exponent: float) -> Node:
    """Elementwise ``a ** exponent`` for a constant real exponent.

    Where the base is exactly zero the derivative is taken to be 0, which is
    the subgradient used for ``|x|**p`` and ``norm**beta`` at coincident points.
    """
    a = constant(a)
    p = float(exponent)
    x = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.power(x, p)

    def backward(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = p * np.power(x, p - 1.0)
        d = np.where(x == 0.0, 0.0, d)
        return (g * d,)

    return _make(out, (a,), backward)


def absolute(a) -> Node:
    a = constant(a)
    return _make(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def leaky_relu(a, slope: float = 0.01) -> Node:
    if not 0.0 <= slope <= 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1], got {slope}")
    a = constant(a)
    x = a.value
    out = np.maximum(x, slope * x)
    return _make(out, (a,), lambda g: (g * np.where(x > 0, 1.0, slope),))


def sigmoid(a) -> Node:
    a = constant(a)
    x = a.value
    out = np.empty_like(x)
    neg = x < 0
    out[~neg] = 1.0 / (1.0 + np.exp(-x[~neg]))
    ex = np.exp(x[neg])
    out[neg] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clip(a, lo: float, hi: float) -> Node:
    """Clamp into [lo, hi]; the gradient is passed through only strictly inside."""
    a = constant(a)
    inside = (a.value > lo) & (a.value < hi)
    return _make(np.clip(a.value, lo, hi), (a,), lambda g: (np.where(inside, g, 0.0),))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Node:
    """Matrix product; leading axes beyond the last two are batch axes and must agree."""
    a, b = constant(a), constant(b)
    if (
        a.ndim < 2
        or b.ndim != a.ndim
        or a.shape[:-2] != b.shape[:-2]
        or a.shape[-1] != b.shape[-2]
    ):
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.value, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.value, -1, -2) @ g if b.requires_grad else None
        return ga, gb

    return _make(a.value @ b.value, (a, b), backward)


def swapaxes(a, axis1: int, axis2: int) -> Node:
    a = constant(a)
    return _make(
        np.swapaxes(a.value, axis1, axis2), (a,), lambda g: (np.swapaxes(g, axis1, axis2),)
    )


def concatenate(nodes: Sequence, axis: int = -1) -> Node:
    nodes = tuple(constant(n) for n in nodes)
    if not nodes:
        raise ValueError("concatenate: no inputs")
    ndim = nodes[0].ndim
    ax = axis % ndim
    for n in nodes[1:]:
        if n.ndim != ndim or any(
            n.shape[i] != nodes[0].shape[i] for i in range(ndim) if i != ax
        ):
            raise ValueError(
                f"concatenate: incompatible shapes {nodes[0].shape} and {n.shape} on axis {axis}"
            )
    bounds = np.cumsum([n.shape[ax] for n in nodes])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([n.value for n in nodes], axis=ax), nodes, backward)


# ---------------------------------------------------------------- reductions / shape

def sum(a, axis=None, keepdims: bool = False) -> Node:  # noqa: A001 - mirrors numpy
    a = constant(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Node:
    a = constant(a)
    if axis is None:
        count = a.value.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return multiply(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def norm(a, axis: int = -1) -> Node:
    """Euclidean norm along ``axis`` (the last one by default).

    The gradient at the zero vector is defined as 0.
    """
    a = constant(a)
    out = np.sqrt(np.sum(a.value * a.value, axis=axis))

    def backward(g):
        denom = np.expand_dims(out, axis)
        with np.errstate(divide="ignore", invalid="ignore"):
            unit = np.where(denom > 0, a.value / denom, 0.0)
        return (np.expand_dims(g, axis) * unit,)

    return _make(out, (a,), backward)


def reshape(a, shape) -> Node:
    a = constant(a)
    src = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(src),))


def getitem(a, index) -> Node:
    a = constant(a)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.value[index], (a,), backward)


def expand_dims(a, axis: int) -> Node:
    a = constant(a)
    return reshape(a, np.expand_dims(a.value, axis).shape)


def repeat(a, repeats: int, axis: int = 0) -> Node:
    a = constant(a)
    ax = axis % a.ndim

    def backward(g):
        shp = list(a.shape)
        shp.insert(ax + 1, repeats)
        return (g.reshape(shp).sum(axis=ax + 1),)

    return _make(np.repeat(a.value, repeats, axis=ax), (a,), backward)
