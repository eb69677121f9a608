"""Minimal reverse-mode automatic differentiation over numpy arrays.

Only what the certificate loss and the policy rollouts need: broadcasting
arithmetic, batched matmul, reductions, indexing, stacking and smooth
elementwise functions whose derivatives are known in closed form. A graph is
recorded only when at least one input requires a gradient, so the same code
path doubles as a plain numpy evaluator.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import interval as _iv


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "_parents")
    __array_priority__ = 2000

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=float)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()

    def __repr__(self) -> str:
        return f"Tensor({self.value!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def T(self) -> Tensor:
        return swapaxes(self, -1, -2)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable node."""
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {
            id(self): np.ones_like(self.value) if seed is None else np.asarray(seed, dtype=float)
        }
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node._parents:
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _val(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _node(value: np.ndarray, *pairs) -> Tensor:
    out = Tensor(value)
    live = tuple((p, f) for p, f in pairs if isinstance(p, Tensor) and p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def add(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _node(
        av + bv,
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(g, bv.shape)),
    )


def neg(a) -> Tensor:
    return _node(-_val(a), (a, lambda g: -g))


def mul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    return _node(
        av * bv,
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    )


def matmul(a, b) -> Tensor:
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")

    def ga(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def gb(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _node(av @ bv, (a, ga), (b, gb))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    av = _val(a)
    out = av.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, (a, vjp))


def reshape(a, shape) -> Tensor:
    av = _val(a)
    return _node(av.reshape(shape), (a, lambda g: g.reshape(av.shape)))


def swapaxes(a, i: int, j: int) -> Tensor:
    return _node(np.swapaxes(_val(a), i, j), (a, lambda g: np.swapaxes(g, i, j)))


def expand_dims(a, axis: int) -> Tensor:
    av = _val(a)
    return _node(np.expand_dims(av, axis), (a, lambda g: g.reshape(av.shape)))


def getitem(a, idx) -> Tensor:
    av = _val(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _node(av[idx], (a, vjp))


def stack(items: Sequence, axis: int = 0) -> Tensor:
    vals = [_val(t) for t in items]
    out = np.stack(vals, axis=axis)
    pairs = []
    for i, t in enumerate(items):
        pairs.append((t, lambda g, i=i: np.take(g, i, axis=axis)))
    return _node(out, *pairs)


def relu(a) -> Tensor:
    """Positive part ``(x)^+``; the subgradient at 0 is taken as 0."""
    av = _val(a)
    mask = av > 0.0
    return _node(np.where(mask, av, 0.0), (a, lambda g: g * mask))


def elementwise(a, f: Callable, df: Callable) -> Tensor:
    av = _val(a)
    return _node(f(av), (a, lambda g: g * df(av)))


# smooth scalar functions with their derivative towers ----------------------


def _tanh_d3(x):
    t = np.tanh(x)
    s = 1.0 - t * t
    return -2.0 * s * (1.0 - 3.0 * t * t)


def _softplus_d3(x):
    s = _iv.sigmoid(x)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


# each tower lists f, f', f'', f'''; the loss differentiates f'' once more
TOWERS: dict[str, tuple[Callable, ...]] = {
    "identity": (_iv.POINT_FUNCTIONS["identity"], _iv.POINT_FUNCTIONS["identity_d1"], _zeros, _zeros),
    "tanh": (np.tanh, _iv._tanh_d1, _iv._tanh_d2, _tanh_d3),
    "softplus": (_iv.softplus, _iv.sigmoid, _iv._softplus_d2, _softplus_d3),
    "sin": (np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x)),
    "cos": (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), np.sin),
    "exp": (np.exp, np.exp, np.exp, np.exp),
}


def apply(name: str, a, order: int = 0) -> Tensor:
    """Evaluate the ``order``-th derivative of the named function (order ≤ 2)."""
    tower = TOWERS[name]
    return elementwise(a, tower[order], tower[order + 1])


def tanh(a) -> Tensor:
    return apply("tanh", a)


def sin(a) -> Tensor:
    return apply("sin", a)


def cos(a) -> Tensor:
    return apply("cos", a)


def exp(a) -> Tensor:
    return apply("exp", a)
