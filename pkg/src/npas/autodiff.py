"""Reverse-mode automatic differentiation on numpy arrays.

A :class:`Tape` records every primitive applied to a :class:`Var` together
with a closure computing its vector-Jacobian product. Functions in this
module accept plain arrays as well; when none of the inputs is a ``Var`` the
computation is carried out eagerly and a plain array is returned, so the
same code path serves training and evaluation.

Complex values follow the convention that the gradient stored for a complex
node ``z = x + jy`` is ``dL/dx + j dL/dy`` for a real scalar loss ``L``.
For a holomorphic primitive ``f`` this gives ``grad_in = grad_out * conj(f'(z))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "id")
    __array_ufunc__ = None  # make ndarray <op> Var dispatch to Var.__r<op>__

    def __init__(self, value: np.ndarray, tape: "Tape", id: int):
        self.value = value
        self.tape = tape
        self.id = id

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)


@dataclass
class Node:
    op: str
    out: int
    inputs: list[int]
    vjps: list[Callable[[np.ndarray], np.ndarray]] = field(repr=False)
    real_inputs: list[bool] = field(repr=False)
    shapes: list[tuple] = field(repr=False)


class Tape:
    """Ordered record of primitive operations.

    Node ids increase monotonically, so the record is already in topological
    order and the backward pass is a single reverse sweep.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._next = 0

    def var(self, value) -> Var:
        """Register a leaf (e.g. a trainable parameter)."""
        v = Var(np.asarray(value), self, self._next)
        self._next += 1
        return v

    def watch(self, arrays: dict[str, np.ndarray]) -> dict[str, Var]:
        return {k: self.var(v) for k, v in arrays.items()}

    def _record(self, op, value, parents) -> Var:
        out = Var(np.asarray(value), self, self._next)
        self._next += 1
        self.nodes.append(
            Node(
                op,
                out.id,
                [p.id for p, _ in parents],
                [f for _, f in parents],
                [not np.iscomplexobj(p.value) for p, _ in parents],
                [p.value.shape for p, _ in parents],
            )
        )
        return out

    def __len__(self):
        return len(self.nodes)


class Gradients(dict):
    """Mapping node id -> gradient; index with a ``Var`` for convenience."""

    def __getitem__(self, key):
        if isinstance(key, Var):
            if key.id in self:
                return dict.__getitem__(self, key.id)
            return np.zeros_like(key.value, dtype=float if not np.iscomplexobj(key.value) else complex)
        return dict.__getitem__(self, key)


def backward(tape: Tape, loss: Var) -> Gradients:
    """Reverse sweep from a scalar ``loss``; the tape itself is not modified."""
    if not isinstance(loss, Var) or loss.tape is not tape:
        raise ValueError("loss is not a node on this tape")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    grads = Gradients()
    dict.__setitem__(grads, loss.id, np.ones_like(loss.value, dtype=float))
    for node in reversed(tape.nodes):
        g = dict.get(grads, node.out)
        if g is None:
            continue
        for pid, fn, is_real, shape in zip(node.inputs, node.vjps, node.real_inputs, node.shapes):
            gi = _unbroadcast(np.asarray(fn(g)), shape)
            if is_real and np.iscomplexobj(gi):
                gi = gi.real
            prev = dict.get(grads, pid)
            dict.__setitem__(grads, pid, gi if prev is None else prev + gi)
    return grads


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# helpers


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


def shape_of(x):
    return value(x).shape


def _tape_of(*xs) -> Tape | None:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _emit(op, out, parents):
    """Record ``out`` if any parent is a Var; parents: [(input, vjp), ...]."""
    tape = _tape_of(*(p for p, _ in parents))
    if tape is None:
        return out
    live = [(p, f) for p, f in parents if isinstance(p, Var)]
    for p, _ in live:
        if p.tape is not tape:
            raise ValueError("mixing variables from different tapes")
    return tape._record(op, out, live)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    return _emit("add", value(a) + value(b), [(a, lambda g: g), (b, lambda g: g)])


def sub(a, b):
    return _emit("sub", value(a) - value(b), [(a, lambda g: g), (b, lambda g: -g)])


def neg(a):
    return _emit("neg", -value(a), [(a, lambda g: -g)])


def mul(a, b):
    av, bv = value(a), value(b)
    return _emit("mul", av * bv, [(a, lambda g: g * np.conj(bv)), (b, lambda g: g * np.conj(av))])


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    return _emit(
        "div", out, [(a, lambda g: g / np.conj(bv)), (b, lambda g: -g * np.conj(out / bv))]
    )


def scale(a, c):
    """Multiply by a constant (kept as a separate primitive for clarity on tapes)."""
    return _emit("scale", value(a) * c, [(a, lambda g: g * np.conj(c))])


def exp(a):
    out = np.exp(value(a))
    return _emit("exp", out, [(a, lambda g: g * np.conj(out))])


def log(a):
    av = value(a)
    return _emit("log", np.log(av), [(a, lambda g: g / np.conj(av))])


def sqrt(a):
    out = np.sqrt(value(a))
    return _emit("sqrt", out, [(a, lambda g: g * 0.5 / np.conj(out))])


def tanh(a):
    out = np.tanh(value(a))
    return _emit("tanh", out, [(a, lambda g: g * (1.0 - out**2))])


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    out = _sigmoid(value(a))
    return _emit("sigmoid", out, [(a, lambda g: g * out * (1.0 - out))])


def softplus(a):
    """log(1 + e^a), computed stably."""
    av = value(a)
    return _emit("softplus", np.logaddexp(0.0, av), [(a, lambda g: g * _sigmoid(av))])


def abs2(a):
    """|a|^2 as a real array."""
    av = value(a)
    out = av.real**2 + av.imag**2 if np.iscomplexobj(av) else av**2
    return _emit("abs2", out, [(a, lambda g: 2.0 * g * av)])


def conj(a):
    return _emit("conj", np.conj(value(a)), [(a, lambda g: np.conj(g))])


def real(a):
    return _emit("real", np.real(value(a)), [(a, lambda g: np.real(g) + 0j)])


def imag(a):
    return _emit("imag", np.imag(value(a)), [(a, lambda g: 1j * np.real(g))])


def complex_(re, im):
    out = value(re) + 1j * value(im)
    return _emit("complex", out, [(re, lambda g: np.real(g)), (im, lambda g: np.imag(g))])


def clip(a, lo, hi):
    av = value(a)
    inside = (av > lo) & (av < hi)
    return _emit("clip", np.clip(av, lo, hi), [(a, lambda g: g * inside)])


def stop_gradient(a):
    return value(a).copy()


def straight_through(soft, hard):
    """Forward value ``hard``; gradients pass unchanged to ``soft``."""
    hard = np.asarray(hard)
    if hard.shape != shape_of(soft):
        raise ValueError("hard and soft shapes differ")
    return _emit("straight_through", hard.astype(value(soft).dtype), [(soft, lambda g: g)])


# ---------------------------------------------------------------------------
# reductions and normalizations


def _expand(g, axis, keepdims, ndim):
    if axis is None or keepdims:
        return g
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    axes = sorted(a % ndim for a in axes)
    for a in axes:
        g = np.expand_dims(g, a)
    return g


def sum(a, axis=None, keepdims=False):  # noqa: A001
    av = value(a)
    out = av.sum(axis=axis, keepdims=keepdims)
    return _emit(
        "sum",
        out,
        [(a, lambda g: np.broadcast_to(_expand(g, axis, keepdims, av.ndim), av.shape))],
    )


def mean(a, axis=None, keepdims=False):
    av = value(a)
    out = av.mean(axis=axis, keepdims=keepdims)
    n = av.size / np.size(out)
    return _emit(
        "mean",
        out,
        [(a, lambda g: np.broadcast_to(_expand(g, axis, keepdims, av.ndim), av.shape) / n)],
    )


def _lse(x, axis):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m


def softmax(a, axis=-1):
    av = value(a)
    out = np.exp(av - _lse(av, axis))
    return _emit(
        "softmax", out, [(a, lambda g: out * (g - np.sum(g * out, axis=axis, keepdims=True)))]
    )


def log_softmax(a, axis=-1):
    av = value(a)
    out = av - _lse(av, axis)
    p = np.exp(out)
    return _emit(
        "log_softmax", out, [(a, lambda g: g - p * np.sum(g, axis=axis, keepdims=True))]
    )


def logsumexp(a, axis=-1):
    av = value(a)
    lse = _lse(av, axis)
    with np.errstate(invalid="ignore"):
        p = np.where(np.isfinite(lse), np.exp(av - lse), 0.0)
    return _emit(
        "logsumexp",
        np.squeeze(lse, axis=axis),
        [(a, lambda g: np.expand_dims(g, axis) * p)],
    )


# ---------------------------------------------------------------------------
# linear algebra and indexing


def matmul(a, b):
    av, bv = value(a), value(b)
    out = av @ bv
    if bv.ndim == 1:
        ga = lambda g: g[..., None] * np.conj(bv)  # noqa: E731
        gb = lambda g: np.tensordot(np.conj(av), g, axes=(tuple(range(av.ndim - 1)), tuple(range(g.ndim))))  # noqa: E731
    elif av.ndim == 1:
        ga = lambda g: g @ np.conj(bv).swapaxes(-1, -2)  # noqa: E731
        gb = lambda g: np.conj(av)[:, None] * g[..., None, :]  # noqa: E731
    else:
        ga = lambda g: g @ np.conj(bv).swapaxes(-1, -2)  # noqa: E731
        gb = lambda g: np.conj(av).swapaxes(-1, -2) @ g  # noqa: E731
    return _emit("matmul", out, [(a, ga), (b, gb)])


def take(a, idx, axis=-1):
    """``np.take`` along ``axis`` with an integer index array of any shape."""
    av = value(a)
    idx = np.asarray(idx)
    axis = axis % av.ndim
    out = np.take(av, idx, axis=axis)

    def vjp(g):
        moved = np.moveaxis(av, axis, -1)
        lead, n = moved.shape[:-1], moved.shape[-1]
        # g has shape lead[:axis] + idx.shape + lead[axis:] -> bring idx dims last
        k = idx.ndim
        gm = np.moveaxis(g, list(range(axis, axis + k)), list(range(g.ndim - k, g.ndim)))
        p = int(np.prod(lead)) if lead else 1
        gm = gm.reshape(p, idx.size)
        lin = (np.arange(p)[:, None] * n + idx.ravel()[None, :]).ravel()
        if np.iscomplexobj(gm):
            acc = np.bincount(lin, gm.real.ravel(), p * n) + 1j * np.bincount(lin, gm.imag.ravel(), p * n)
        else:
            acc = np.bincount(lin, gm.ravel(), p * n)
        return np.moveaxis(acc.reshape(*lead, n), -1, axis)

    return _emit("take", out, [(a, vjp)])


def getitem(a, key):
    av = value(a)

    def vjp(g):
        gx = np.zeros(av.shape, dtype=np.result_type(g.dtype, float))
        np.add.at(gx, key, g)
        return gx

    return _emit("getitem", av[key], [(a, vjp)])


def reshape(a, shape):
    av = value(a)
    return _emit("reshape", av.reshape(shape), [(a, lambda g: g.reshape(av.shape))])


def concat(xs: Sequence, axis=0):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def piece(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _emit("concat", out, [(x, piece(i)) for i, x in enumerate(xs)])


def stack(xs: Sequence, axis=0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def piece(i):
        return lambda g: np.take(g, i, axis=axis)

    return _emit("stack", out, [(x, piece(i)) for i, x in enumerate(xs)])
