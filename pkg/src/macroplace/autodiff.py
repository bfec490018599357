"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray plus the closures needed to push gradients
back to its parents. The operator set is exactly what the score network
consumes: broadcast arithmetic, matmul, transpose, concat, reductions, a few
smooth nonlinearities, and a numerically stable softmax. Backward visits each
node once in reverse topological order.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape`` to undo numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the computation graph."""

    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _node(value, parents: tuple["Tensor", ...], backward) -> "Tensor":
        out = Tensor(value)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = parents
            out._backward = backward
        return out

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)

        def backward(g, a=self, b=other):
            return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

        return Tensor._node(self.value + other.value, (self, other), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._lift(other)

        def backward(g, a=self, b=other):
            return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

        return Tensor._node(self.value - other.value, (self, other), backward)

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)

        def backward(g, a=self, b=other):
            return (
                _unbroadcast(g * b.value, a.shape),
                _unbroadcast(g * a.value, b.shape),
            )

        return Tensor._node(self.value * other.value, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)

        def backward(g, a=self, b=other):
            return (
                _unbroadcast(g / b.value, a.shape),
                _unbroadcast(-g * a.value / (b.value**2), b.shape),
            )

        return Tensor._node(self.value / other.value, (self, other), backward)

    def __neg__(self):
        def backward(g):
            return (-g,)

        return Tensor._node(-self.value, (self,), backward)

    def __matmul__(self, other):
        other = Tensor._lift(other)

        def backward(g, a=self, b=other):
            return (g @ b.value.T, a.value.T @ g)

        return Tensor._node(self.value @ other.value, (self, other), backward)

    @property
    def T(self) -> "Tensor":
        def backward(g):
            return (g.T,)

        return Tensor._node(self.value.T, (self,), backward)

    def pow(self, exponent: float) -> "Tensor":
        def backward(g, a=self, p=exponent):
            return (g * p * a.value ** (p - 1),)

        return Tensor._node(self.value**exponent, (self,), backward)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def backward(g, a=self):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, a.shape).copy(),)

        return Tensor._node(self.value.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.value.size if axis is None else self.value.shape[axis]

        def backward(g, a=self, n=count):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return (np.broadcast_to(gg, a.shape).copy() / n,)

        return Tensor._node(self.value.mean(axis=axis, keepdims=keepdims), (self,), backward)

    # -- nonlinearities -------------------------------------------------------

    def exp(self) -> "Tensor":
        out_val = np.exp(self.value)

        def backward(g, v=out_val):
            return (g * v,)

        return Tensor._node(out_val, (self,), backward)

    def log(self) -> "Tensor":
        def backward(g, a=self):
            return (g / a.value,)

        return Tensor._node(np.log(self.value), (self,), backward)

    def sqrt(self) -> "Tensor":
        out_val = np.sqrt(self.value)

        def backward(g, v=out_val):
            return (g / (2.0 * v),)

        return Tensor._node(out_val, (self,), backward)

    def tanh(self) -> "Tensor":
        out_val = np.tanh(self.value)

        def backward(g, v=out_val):
            return (g * (1.0 - v**2),)

        return Tensor._node(out_val, (self,), backward)

    def sigmoid(self) -> "Tensor":
        out_val = 1.0 / (1.0 + np.exp(-self.value))

        def backward(g, v=out_val):
            return (g * v * (1.0 - v),)

        return Tensor._node(out_val, (self,), backward)

    def silu(self) -> "Tensor":
        sig = 1.0 / (1.0 + np.exp(-self.value))
        out_val = self.value * sig

        def backward(g, a=self, s=sig):
            return (g * (s + a.value * s * (1.0 - s)),)

        return Tensor._node(out_val, (self,), backward)

    def relu(self) -> "Tensor":
        mask = self.value > 0

        def backward(g, m=mask):
            return (g * m,)

        return Tensor._node(self.value * mask, (self,), backward)

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.value - self.value.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_val = e / e.sum(axis=axis, keepdims=True)

        def backward(g, y=out_val):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        return Tensor._node(out_val, (self,), backward)

    # -- backward pass ---------------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate gradients of this node w.r.t. every requires_grad leaf."""
        if not self.requires_grad:
            raise ValueError("backward on a constant graph")
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward without seed needs a scalar output")
            seed = np.ones_like(self.value)
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
            for p in node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            if node._backward is None:
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node.parents, parent_grads):
                if not parent.requires_grad or pg is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor._node(
        np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), backward
    )


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
