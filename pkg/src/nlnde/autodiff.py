"""Reverse-mode automatic differentiation over numpy arrays.

Every value is a float64 ndarray wrapped in a :class:`Tensor`.  Operations
build a computation graph; :func:`backward` walks it in reverse topological
order and accumulates gradients into every tensor created with
``requires_grad=True``.  Tensors that do not require gradients carry no graph
edges, so constants (embedding lookups, masks, one-hot features) are free.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


def _as_array(value) -> Array:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_bwd", "name")

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        bwd: Callable[[Array], None] | None = None,
        name: str | None = None,
    ):
        self.value = _as_array(value)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._bwd = bwd
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy())

    def __repr__(self) -> str:
        tag = self.name or ("param" if self.requires_grad else "const")
        return f"Tensor({tag}, shape={self.shape})"

    # operator sugar; every overload routes through the module-level ops
    def __add__(self, other):
        return add(self, _ensure(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _ensure(other))

    def __rsub__(self, other):
        return sub(_ensure(other), self)

    def __mul__(self, other):
        return mul(self, _ensure(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, _ensure(other))

    def __matmul__(self, other):
        return matmul(self, _ensure(other))

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(value, name: str) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(_as_array(value).copy(), requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value)


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: Array, parents: Sequence[Tensor], bwd: Callable[[Array], None]) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, parents=tuple(parents), bwd=bwd)
    return Tensor(value)


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor, seed: Array | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into .grad of every reachable parameter."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value) if seed is None else _as_array(seed)
    for node in reversed(order):
        if node._bwd is not None:
            node._bwd(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# primitive operations


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.value + b.value

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return _node(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.value - b.value

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return _node(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value * b.value

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _node(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.value / b.value

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(g / b.value, a.value.shape))
        _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))

    return _node(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g: Array) -> None:
        _accum(a, -g)

    return _node(-a.value, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.value.shape} @ {b.value.shape}")
    out = a.value @ b.value

    def bwd(g: Array) -> None:
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return _node(out, (a, b), bwd)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def bwd(g: Array) -> None:
        _accum(a, g * (1.0 - out * out))

    return _node(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    v = a.value
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)

    def bwd(g: Array) -> None:
        _accum(a, g * out * (1.0 - out))

    return _node(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)

    def bwd(g: Array) -> None:
        _accum(a, g * out)

    return _node(out, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out = np.log(a.value)

    def bwd(g: Array) -> None:
        _accum(a, g / a.value)

    return _node(out, (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g: Array) -> None:
        gg = g
        if not keepdims and axis is not None:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % a.value.ndim for ax in axes)
            shape = tuple(1 if i in axes else s for i, s in enumerate(a.value.shape))
            gg = gg.reshape(shape)
        _accum(a, np.broadcast_to(gg, a.value.shape).copy())

    return _node(out, (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else np.prod(
        [a.value.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / float(n)))


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    v = a.value
    m = np.max(v, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out_kd = m_safe + np.log(np.sum(np.exp(v - m_safe), axis=axis, keepdims=True))
    out = out_kd if keepdims else np.squeeze(out_kd, axis=axis)
    # softmax weights; rows that are all -inf get zero weight everywhere
    w = np.exp(v - np.where(np.isfinite(out_kd), out_kd, 0.0))
    if not np.all(np.isfinite(out_kd)):
        w = np.where(np.isfinite(out_kd), w, 0.0)

    def bwd(g: Array) -> None:
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, gg * w)

    return _node(out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return exp(sub(a, logsumexp(a, axis=axis, keepdims=True)))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g: Array) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            key = [slice(None)] * g.ndim
            key[axis] = slice(lo, hi)
            _accum(t, g[tuple(key)])

    return _node(out, tensors, bwd)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    out = np.stack([t.value for t in tensors], axis=axis)

    def bwd(g: Array) -> None:
        for i, t in enumerate(tensors):
            _accum(t, np.take(g, i, axis=axis))

    return _node(out, tensors, bwd)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; use take_rows/take_flat for index arrays."""
    out = a.value[key]

    def bwd(g: Array) -> None:
        if not a.requires_grad:
            return
        gz = np.zeros_like(a.value)
        gz[key] += g
        _accum(a, gz)

    return _node(out, (a,), bwd)


def take_rows(a: Tensor, idx: Array) -> Tensor:
    """Gather rows of a 2-D tensor; repeated indices accumulate on backward."""
    idx = np.asarray(idx)
    out = a.value[idx]

    def bwd(g: Array) -> None:
        if not a.requires_grad:
            return
        gz = np.zeros_like(a.value)
        np.add.at(gz, idx, g)
        _accum(a, gz)

    return _node(out, (a,), bwd)


def take_flat(a: Tensor, flat_idx: Array) -> Tensor:
    """Gather arbitrary elements by raveled index; output has flat_idx's shape."""
    flat_idx = np.asarray(flat_idx)
    out = a.value.ravel()[flat_idx.ravel()].reshape(flat_idx.shape)

    def bwd(g: Array) -> None:
        if not a.requires_grad:
            return
        gz = np.zeros(a.value.size, dtype=np.float64)
        np.add.at(gz, flat_idx.ravel(), g.ravel())
        _accum(a, gz.reshape(a.value.shape))

    return _node(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.value.reshape(shape)

    def bwd(g: Array) -> None:
        _accum(a, g.reshape(a.value.shape))

    return _node(out, (a,), bwd)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out = np.transpose(a.value, axes)
    inv = None if axes is None else tuple(np.argsort(axes))

    def bwd(g: Array) -> None:
        _accum(a, np.transpose(g, inv))

    return _node(out, (a,), bwd)


def where(cond: Array, a: Tensor, b: Tensor) -> Tensor:
    """Select by a constant boolean mask; gradient flows only to the taken side."""
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.value, b.value)

    def bwd(g: Array) -> None:
        _accum(a, _unbroadcast(np.where(cond, g, 0.0), a.value.shape))
        _accum(b, _unbroadcast(np.where(cond, 0.0, g), b.value.shape))

    return _node(out, (a, b), bwd)
