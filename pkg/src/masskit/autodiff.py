"""Reverse-mode automatic differentiation over numpy arrays.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input requires a gradient.  Outside a tape everything runs in
inference mode and no graph is kept::

    w = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = (w * w).sum()
    tape.backward(loss)
    w.grad  # array([2., 2., 2.])
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "backward",
    "grad_check",
    "set_default_dtype",
    "get_default_dtype",
    "tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "softmax",
    "layer_norm",
    "relu",
    "gelu",
    "exp",
    "sqrt",
    "embedding",
    "concat",
    "reduce_sum",
    "reduce_mean",
    "dropout",
    "masked_fill",
    "reshape",
    "transpose",
    "index",
]

_DEFAULT_DTYPE = np.float64
_state = threading.local()

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        shapes_txt = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shapes_txt}")
        self.shapes = shapes


class NonFiniteError(ArithmeticError):
    pass


def set_default_dtype(dtype) -> None:
    """Select float64 (default) or float32 for newly created tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError("dtype must be float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("output", "inputs", "vjp")

    def __init__(self, output, inputs, vjp):
        self.output = output
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered log of primitive applications with their backward rules."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def _active_tape() -> Tape | None:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = needs
    out.grad = None
    out.name = None
    if needs:
        tape.records.append(_Record(out, tuple(inputs), vjp))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    produced = {id(r.output): k for k, r in enumerate(tape.records)}
    if id(loss) not in produced:
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    stop = produced[id(loss)]
    for rec in reversed(tape.records[: stop + 1]):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        in_grads = rec.vjp(g)
        for t, gt in zip(rec.inputs, in_grads):
            if gt is None or not t.requires_grad:
                continue
            if gt.shape != t.shape:
                gt = _unbroadcast(gt, t.shape)
            if id(t) in produced:
                prev = grads.get(id(t))
                grads[id(t)] = gt if prev is None else prev + gt
            else:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gt


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(k for k, s in enumerate(shape) if s == 1 and g.shape[k] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b), lambda g: (g * bd if a.requires_grad else None, g * ad if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = g / bd if a.requires_grad else None
        gb = -g * out / bd if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _record(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), lambda g: (g * mask,))


_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GELU."""
    a = _as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    out = x * cdf

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _record(out, (a,), vjp)


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true by ``value`` (mask broadcasts)."""
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        mask = np.broadcast_to(mask, a.shape)
    except ValueError:
        raise ShapeError("masked_fill", a.shape, mask.shape) from None
    out = np.where(mask, np.asarray(value, dtype=a.data.dtype), a.data)
    return _record(out, (a,), lambda g: (np.where(mask, 0.0, g),))


def dropout(a, p: float, train: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity unless ``train`` and ``p > 0``."""
    a = _as_tensor(a)
    if not train or p <= 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if rng is None:
        raise ValueError("dropout in train mode needs an explicit random generator")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return _record(a.data * keep, (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None
    ad, bd = a.data, b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(g, bd.swapaxes(-1, -2))
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.matmul(ad.swapaxes(-1, -2), g)
        return ga, gb

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------- normalizations


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record(out, (a,), vjp)


def layer_norm(a, scale, shift, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply learnable ``scale`` and ``shift``."""
    a, scale, shift = _as_tensor(a), _as_tensor(scale), _as_tensor(shift)
    d = a.shape[-1]
    if scale.shape != (d,) or shift.shape != (d,):
        raise ShapeError("layer_norm", a.shape, scale.shape, shift.shape)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * scale.data + shift.data

    def vjp(g):
        gx = None
        if a.requires_grad:
            gh = g * scale.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gs = (g * xhat).reshape(-1, d).sum(axis=0) if scale.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if shift.requires_grad else None
        return gx, gs, gb

    return _record(out, (a, scale, shift), vjp)


# ---------------------------------------------------------------- gather / shape


def embedding(table, indices) -> Tensor:
    """Rows of ``table`` selected by an integer array: ``table[indices]``."""
    table = _as_tensor(table)
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise TypeError("embedding indices must be integers")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"embedding index out of range for table with {table.shape[0]} rows")
    out = table.data[idx]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape((-1,) + table.shape[1:]))
        return (gt,)

    return _record(out, (table,), vjp)


def index(a, key) -> Tensor:
    a = _as_tensor(a)
    out = a.data[key]
    if not isinstance(out, np.ndarray):
        out = np.asarray(out)

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, key, g)
        return (ga,)

    return _record(np.array(out, copy=True), (a,), vjp)


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in ts)) from None
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, ts, vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = _as_tensor(a)
    out = np.ascontiguousarray(np.transpose(a.data, axes))
    inv = None if axes is None else np.argsort(axes)
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), vjp)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[k] for k in axes]))
    return div(reduce_sum(a, axis, keepdims), float(count))


# ---------------------------------------------------------------- gradient check


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-4) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f`` must rebuild the scalar loss from ``params`` deterministically on
    every call.  Relative error per entry is
    ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError("loss is not finite")
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteError(f"non-finite gradient for parameter {p.name or p.shape}")
        flat = p.data.reshape(-1)
        ga = analytic.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = f().item()
            flat[k] = orig - eps
            down = f().item()
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"non-finite loss while perturbing {p.name or p.shape}[{k}]")
            numeric = (up - down) / (2.0 * eps)
            err = abs(ga[k] - numeric) / max(1e-8, abs(ga[k]) + abs(numeric))
            worst = max(worst, err)
    return worst
