"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation builds a `Var` node that remembers its parents together with
a vector-Jacobian product closure. Calling :func:`backward` on a scalar output
replays those closures in reverse topological order, accumulating exact
gradients into the participating leaves. Constants (nodes that are neither
leaves nor descendants of one) carry no tape, so graphs built with frozen
parameters stay cheap -- that is what makes adversarial input-gradient passes
cheaper than full parameter backprop.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Var",
    "leaf",
    "const",
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "relu",
    "log_softmax",
    "pick",
    "reshape",
    "sum_all",
    "sum_rows",
    "mean_all",
    "square",
    "maximum",
    "rowmax",
    "l2norm_rows",
    "backward",
    "grad_of",
]

_NORM_FLOOR = 1e-12  # subgradient guard for the L2 norm at zero


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


class Var:
    """A node in the computation graph: a float64 array plus its tape entry."""

    __slots__ = ("value", "grad", "_parents", "_is_leaf")

    def __init__(self, value, parents=(), is_leaf: bool = False):
        self.value = _as_f64(value)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._is_leaf = is_leaf

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def tracked(self) -> bool:
        return self._is_leaf or bool(self._parents)

    # operator sugar; plain arrays/scalars are lifted to constants
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return mul(self, const(-1.0))

    def __repr__(self) -> str:
        kind = "leaf" if self._is_leaf else ("op" if self._parents else "const")
        return f"Var({kind}, shape={self.value.shape})"


def leaf(value) -> Var:
    """Differentiable input; gradients accumulate here. Shares the caller's buffer."""
    return Var(value, is_leaf=True)


def const(value) -> Var:
    """Non-differentiable input; never appears on the tape."""
    return Var(value)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else const(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` by summing expanded axes."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(value: np.ndarray, pairs: Iterable[tuple[Var, object]]) -> Var:
    parents = tuple((p, vjp) for p, vjp in pairs if p.tracked())
    return Var(value, parents=parents)


def add(a: Var, b: Var) -> Var:
    return _make(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, a.value.shape)), (b, lambda g: _unbroadcast(g, b.value.shape))],
    )


def sub(a: Var, b: Var) -> Var:
    return _make(
        a.value - b.value,
        [(a, lambda g: _unbroadcast(g, a.value.shape)), (b, lambda g: _unbroadcast(-g, b.value.shape))],
    )


def mul(a: Var, b: Var) -> Var:
    return _make(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ],
    )


def div(a: Var, b: Var) -> Var:
    return _make(
        a.value / b.value,
        [
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape)),
        ],
    )


def matmul(a: Var, b: Var) -> Var:
    return _make(
        a.value @ b.value,
        [(a, lambda g: g @ b.value.T), (b, lambda g: a.value.T @ g)],
    )


def relu(a: Var) -> Var:
    mask = a.value > 0.0
    return _make(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def log_softmax(a: Var) -> Var:
    """Row-wise log-softmax with log-sum-exp stabilization."""
    z = a.value
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    out = z - lse
    softmax = np.exp(out)
    return _make(out, [(a, lambda g: g - softmax * g.sum(axis=1, keepdims=True))])


def pick(a: Var, indices: np.ndarray) -> Var:
    """Row-wise gather: out[i] = a[i, indices[i]]."""
    idx = np.asarray(indices, dtype=np.int64)
    rows = np.arange(a.value.shape[0])

    def vjp(g):
        out = np.zeros_like(a.value)
        out[rows, idx] = g
        return out

    return _make(a.value[rows, idx], [(a, vjp)])


def reshape(a: Var, shape: Sequence[int]) -> Var:
    shape = tuple(shape)
    return _make(a.value.reshape(shape), [(a, lambda g: g.reshape(a.value.shape))])


def sum_all(a: Var) -> Var:
    return _make(np.asarray(a.value.sum()), [(a, lambda g: np.broadcast_to(g, a.value.shape).copy())])


def sum_rows(a: Var) -> Var:
    """Sum over axis 1 of a 2-D array."""
    return _make(a.value.sum(axis=1), [(a, lambda g: np.broadcast_to(g[:, None], a.value.shape).copy())])


def mean_all(a: Var) -> Var:
    n = a.value.size
    return _make(np.asarray(a.value.mean()), [(a, lambda g: np.broadcast_to(g / n, a.value.shape).copy())])


def square(a: Var) -> Var:
    return _make(a.value * a.value, [(a, lambda g: 2.0 * a.value * g)])


def maximum(a: Var, floor: float) -> Var:
    """Elementwise max against a constant; subgradient routes to `a` strictly above the floor."""
    mask = a.value > floor
    return _make(np.maximum(a.value, floor), [(a, lambda g: g * mask)])


def rowmax(a: Var) -> Var:
    """Row-wise max of a 2-D array; ties route the gradient to the lowest index."""
    idx = a.value.argmax(axis=1)
    rows = np.arange(a.value.shape[0])

    def vjp(g):
        out = np.zeros_like(a.value)
        out[rows, idx] = g
        return out

    return _make(a.value[rows, idx], [(a, vjp)])


def l2norm_rows(a: Var) -> Var:
    """Row-wise Euclidean norm; subgradient 0 at the origin."""
    norms = np.sqrt((a.value * a.value).sum(axis=1))
    safe = np.maximum(norms, _NORM_FLOOR)
    return _make(norms, [(a, lambda g: (g / safe)[:, None] * a.value)])


def backward(out: Var, seed: np.ndarray | None = None) -> None:
    """Accumulate gradients of `out` into every tracked ancestor's `.grad`."""
    topo: list[Var] = []
    visited: set[int] = set()
    stack: list[tuple[Var, bool]] = [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    out.grad = np.ones_like(out.value) if seed is None else _as_f64(seed)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._parents:
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += contrib


def grad_of(out: Var, wrt: Sequence[Var]) -> list[np.ndarray]:
    """Run backward and return gradients for `wrt`, zeros where disconnected."""
    backward(out)
    return [v.grad if v.grad is not None else np.zeros_like(v.value) for v in wrt]
