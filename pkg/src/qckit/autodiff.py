"""Tape-based reverse-mode differentiation over dense numpy arrays.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient.  Outside a tape every op is a plain
numpy evaluation, which is what inference uses.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = reduce_sum(x * x)
    >>> backward(tape, loss)
    >>> x.grad
    array([2., 4.])
"""

from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "IndexPlan",
    "backward",
    "record",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "einsum",
    "tanh",
    "softplus",
    "relu",
    "reduce_sum",
    "mean",
    "reshape",
    "transpose",
    "gather",
    "scatter_add",
]

_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def clear(self):
        self.nodes.clear()


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """A dense array with an optional accumulated gradient."""

    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None):
        value = np.asarray(value)
        if not np.issubdtype(value.dtype, np.floating):
            value = value.astype(np.float64)
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad = None

    def numpy(self):
        return self.value

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return scale(self, 1.0 / other)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Wrap constants; casts to the dtype of ``like`` so f32 graphs stay f32."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None:
        arr = arr.astype(like.dtype, copy=False)
    return Tensor(arr)


def record(value, inputs, backward_fn) -> Tensor:
    """Create the output tensor of an op and put the op on the active tape.

    ``backward_fn(g)`` must return one gradient (or None) per input.
    """
    out = Tensor(value)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = _Node(out, inputs, backward_fn)
        out._node = node
        _ACTIVE[-1].nodes.append(node)
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires a gradient.

    Gradients accumulate across calls until ``zero_grad`` is called.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    seed = np.ones_like(loss.value)
    if loss._node is None:
        _accumulate_leaf(loss, seed)
        return
    if not any(node is loss._node for node in reversed(tape.nodes)):
        raise ContractError("loss was not recorded on this tape")

    grads = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                _accumulate_leaf(inp, gi)
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi


def _accumulate_leaf(t: Tensor, g):
    g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        value = a.value + b.value
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return record(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        value = a.value - b.value
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return record(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        value = a.value * b.value
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bw(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.value, b.shape) if b.requires_grad else None
        return ga, gb

    return record(value, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return record(a.value * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return record(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    value = np.matmul(a.value, b.value)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape)
        return ga, gb

    return record(value, (a, b), bw)


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum.

    Every index of an operand must also appear in the other operand or the
    output, so each adjoint is itself an einsum.
    """
    a, b = _pair(a, b)
    lhs, out = subscripts.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    for s, other in ((sa, sb), (sb, sa)):
        if len(set(s)) != len(s):
            raise ShapeError(f"repeated index in operand {s!r}")
        if any(c not in other and c not in out for c in s):
            raise ShapeError(f"index of {s!r} summed without a partner in {subscripts!r}")
    try:
        value = np.einsum(subscripts, a.value, b.value, optimize=True)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def bw(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, b.value, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, a.value, optimize=True) if b.requires_grad else None
        return ga, gb

    return record(value, (a, b), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a: Tensor) -> Tensor:
    x = a.value
    y = np.logaddexp(0.0, x).astype(x.dtype, copy=False)

    def bw(g):
        # softplus'(x) = sigmoid(x), evaluated without overflow
        s = np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype, copy=False)
        return (g * s,)

    return record(y, (a,), bw)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return record(np.where(mask, a.value, 0.0).astype(a.dtype), (a,), lambda g: (g * mask,))


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    value = np.sum(a.value, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(value, (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(reduce_sum(a, axis=axis), 1.0 / n)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.ascontiguousarray(a.value.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape) -> Tensor:
    try:
        value = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return record(value, (a,), lambda g: (g.reshape(a.shape),))


class IndexPlan:
    """Index array plus a lazily built sparse scatter matrix.

    Layers with static index maps build one plan per map and reuse it, so the
    sparse structure is assembled once rather than on every pass.
    """

    def __init__(self, indices, size: int):
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.size = int(size)
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= self.size):
            raise ShapeError("index out of range for scatter target")
        self._mats = {}

    def matrix(self, dtype):
        key = np.dtype(dtype).str
        if key not in self._mats:
            n = self.indices.size
            self._mats[key] = sp.csr_matrix(
                (np.ones(n, dtype=dtype), (self.indices, np.arange(n))),
                shape=(self.size, n),
            )
        return self._mats[key]

    def scatter(self, values, axis=-1):
        """Sum ``values`` along ``axis`` into ``size`` slots."""
        mat = self.matrix(values.dtype)
        if axis == 0 or axis == -values.ndim:
            flat = values.reshape(values.shape[0], math.prod(values.shape[1:]))
            return np.asarray(mat @ flat).reshape((self.size,) + values.shape[1:])
        moved = np.moveaxis(values, axis, -1)
        lead = moved.shape[:-1]
        flat = moved.reshape(math.prod(lead), moved.shape[-1])
        out = np.asarray((mat @ flat.T).T)
        return np.moveaxis(out.reshape(lead + (self.size,)), -1, axis)


def _plan(indices, size):
    if isinstance(indices, IndexPlan):
        if indices.size != size:
            raise ShapeError(f"plan targets {indices.size} slots, expected {size}")
        return indices
    return IndexPlan(indices, size)


def gather(a: Tensor, indices, axis: int = -1) -> Tensor:
    """Select entries along ``axis``; the adjoint of :func:`scatter_add`."""
    n = a.shape[axis]
    plan = _plan(indices, n)
    value = np.take(a.value, plan.indices, axis=axis)
    return record(value, (a,), lambda g: (plan.scatter(g, axis=axis),))


def scatter_add(a: Tensor, indices, size: int, axis: int = -1) -> Tensor:
    """Sum entries of ``a`` along ``axis`` into ``size`` output slots."""
    plan = _plan(indices, size)
    if a.shape[axis] != plan.indices.size:
        raise ShapeError(f"scatter of {a.shape[axis]} entries with {plan.indices.size} indices")
    value = plan.scatter(a.value, axis=axis)
    return record(value, (a,), lambda g: (np.take(g, plan.indices, axis=axis),))
