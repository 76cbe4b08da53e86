"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray. While a ``Tape`` is active, every operation
appends one record (output, inputs, backward closure) in execution order;
``Tape.backward`` walks the records exactly once in reverse and accumulates
gradients into the leaf tensors that requested them.

The primitive set is deliberately small: matmul, elementwise arithmetic,
concat/stack/slice/reshape/transpose, embedding lookup, relu/gelu/sigmoid/
log/clip, softmax, layer_norm, dropout and sum/mean/max/min reductions.
No broadcasting beyond what those ops need; no views are ever written to.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "active_tape",
    "constant",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "add_const",
    "matmul",
    "relu",
    "gelu",
    "sigmoid",
    "log",
    "clip",
    "softmax",
    "layer_norm",
    "dropout",
    "embedding",
    "concat",
    "stack",
    "getitem",
    "transpose",
    "reshape",
    "sum_",
    "mean",
    "reduce_max",
    "reduce_min",
    "detach",
]


class Tensor:
    """A node in the computation graph.

    ``data`` is always a floating-point ndarray; ``grad`` is filled by
    ``Tape.backward`` for leaf tensors with ``requires_grad=True`` and
    always shares their shape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._leaf = True

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"


class _Record:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of operations; single-writer, used as a context manager."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append(_Record(out, parents, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every grad-enabled leaf.

        ``loss`` must be a scalar. Parameters that never entered the tape keep
        whatever ``grad`` they already hold (callers zero them beforehand), so
        unused parameters end up with zero gradient.
        """
        if loss.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        if loss._leaf and loss.requires_grad:
            if loss.grad is None:
                loss.zero_grad()
            loss.grad = loss.grad + grads[id(loss)]
        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for parent, pg in zip(rec.parents, rec.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._leaf:
                    if parent.grad is None:
                        parent.grad = np.zeros_like(parent.data)
                    parent.grad = parent.grad + pg
                else:
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg


def constant(value, like: Tensor | None = None, dtype=None) -> Tensor:
    """A tensor outside the gradient path, dtype-matched to ``like`` if given."""
    if dtype is None and like is not None:
        dtype = like.dtype
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    tape = active_tape()
    if tape is not None and out.requires_grad:
        out._leaf = False
        tape.record(out, parents, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _result(ad * bd, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    return _result(a.data * s, (a,), lambda g: (g * s,))


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=a.dtype)
    return _result(a.data + c, (a,), lambda g: (_unbroadcast(g, a.shape),))


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """np.matmul semantics for operands of rank >= 2 (leading dims may broadcast)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), b.shape)
        return ga, gb

    return _result(np.matmul(ad, bd), (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat of zero tensors")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("stack of zero tensors")

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing; gradient scatters back into zeros."""
    shape = a.shape
    dtype = a.dtype

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        z[key] += g
        return (z,)

    return _result(a.data[key], (a,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds (ids may repeat)."""
    ids = np.asarray(ids)
    shape = table.shape
    dtype = table.dtype

    def backward(g):
        z = np.zeros(shape, dtype=dtype)
        np.add.at(z, ids, g)
        return (z,)

    return _result(table.data[ids], (table,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, a.data.dtype.type(0)), (a,), lambda g: (g * mask,))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return _result(out.astype(x.dtype, copy=False), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.log(x), (a,), lambda g: (g / x,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the interior."""
    mask = (a.data > lo) & (a.data < hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``; -inf entries yield exact zeros."""
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (a,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last dimension to mean 0 / variance 1, then affine."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ValueError("layer_norm gain/bias must match the last dimension")
    xd = x.data
    d = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data

    def backward(g):
        dxhat = g * gain.data
        dvar = np.sum(dxhat * xc, axis=-1, keepdims=True) * (-0.5) * inv**3
        dmu = -np.sum(dxhat, axis=-1, keepdims=True) * inv + dvar * np.mean(-2.0 * xc, axis=-1, keepdims=True)
        dx = dxhat * inv + dvar * (2.0 / d) * xc + dmu / d
        red = tuple(range(xd.ndim - 1))
        dgain = np.sum(g * xhat, axis=red)
        dbias = np.sum(g, axis=red)
        return dx, dgain, dbias

    return _result(out, (x, gain, bias), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout: scale kept activations by 1/(1-p); identity at eval."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# reductions


def _bcast_axis(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    return _result(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_bcast_axis(g, shape, axis, keepdims),),
    )


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    count = a.data.size if axis is None else shape[axis]
    inv = a.data.dtype.type(1.0 / count)
    return _result(
        a.data.mean(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_bcast_axis(g * inv, shape, axis, keepdims),),
    )


def _extreme(a: Tensor, axis: int, keepdims: bool, fn) -> Tensor:
    out = fn(a.data, axis=axis, keepdims=keepdims)
    full = out if keepdims else np.expand_dims(out, axis)
    hit = (a.data == full).astype(a.dtype)
    hit /= hit.sum(axis=axis, keepdims=True)  # ties share the gradient

    def backward(g):
        gfull = g if keepdims else np.expand_dims(g, axis)
        return (hit * gfull,)

    return _result(out, (a,), backward)


def reduce_max(a: Tensor, axis: int = 0, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, np.max)


def reduce_min(a: Tensor, axis: int = 0, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, np.min)


def detach(a: Tensor) -> Tensor:
    """Cut the gradient path; the returned tensor shares the underlying data."""
    return Tensor(a.data, requires_grad=False)
