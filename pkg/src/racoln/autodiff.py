"""Dense float tensors with reverse-mode autodiff on a per-thread tape.

Every layer, loss, and metric gradient in this package is built from the ops
defined here, so each op carries its own backward rule and the whole module
is finite-difference tested (see tests).  Ops record onto the innermost
active ``Tape``; without an active tape they are plain numpy forward passes.
Tensors and tapes are confined to the thread that created them.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateInput, InvalidArgument

DEFAULT_DTYPE = np.float64

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A dense float array, optionally participating in the active tape.

    ``grad`` is a same-shape accumulator allocated iff ``requires_grad``;
    repeated backward passes accumulate into it until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.all(np.isfinite(arr)):
            raise InvalidArgument("tensor holds non-finite entries")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self) -> "Tensor":
        return detach(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all graph building goes through the module-level ops
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


class Tape:
    """Ordered record of ops; inputs always precede the ops consuming them."""

    __slots__ = ("ops",)

    def __init__(self):
        # each entry: (out_tensor, input_tensors, grad_fn)
        self.ops: list[tuple] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _stack().pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise InvalidArgument("tape context exited out of order")


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording; ops inside run as plain forward passes."""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    # scalars and raw arrays adopt the other operand's dtype
    if isinstance(a, Tensor):
        return a, as_tensor(b, dtype=a.dtype)
    if isinstance(b, Tensor):
        return as_tensor(a, dtype=b.dtype), b
    return as_tensor(a), as_tensor(b)


def _result(data: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    """Wrap an op output, checking finiteness and recording if required."""
    if not np.all(np.isfinite(data)):
        raise InvalidArgument("op produced non-finite values")
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = np.zeros_like(data) if track else None
    if track:
        tape.ops.append((out, tuple(inputs), grad_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / linear algebra ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), grad_fn)


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def grad_fn(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _result(a.data / b.data, (a, b), grad_fn)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _result(a.data @ b.data, (a, b), grad_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # stable two-sided form
    y = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                 np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def grad_fn(g):
        # derivative undefined at exactly 0; treat as 0 rather than poisoning grads
        denom = np.where(y > 0, 2.0 * y, 1.0)
        return (np.where(y > 0, g / denom, 0.0),)

    return _result(y, (a,), grad_fn)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def grad_fn(g):
        if axis is None:
            return (np.full_like(a.data, g.reshape(())),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.data.dtype, copy=False),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]

    def grad_fn(g):
        if axis is None:
            return (np.full_like(a.data, g.reshape(()) / n),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.shape).astype(a.data.dtype, copy=False),)

    return _result(a.data.mean(axis=axis, keepdims=keepdims), (a,), grad_fn)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(ts))
        )

    return _result(np.concatenate([t.data for t in ts], axis=axis), ts, grad_fn)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]

    def grad_fn(g):
        parts = np.split(g, len(ts), axis=axis)
        return tuple(p.reshape(t.shape) for p, t in zip(parts, ts))

    return _result(np.stack([t.data for t in ts], axis=axis), ts, grad_fn)


def select(a, index: int, axis: int = 1) -> Tensor:
    """Pick one slice along ``axis`` (e.g. time step of a [B, T, d] tensor)."""
    a = as_tensor(a)

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        sl = [slice(None)] * a.ndim
        sl[axis] = index
        ga[tuple(sl)] = g
        return (ga,)

    return _result(np.take(a.data, index, axis=axis), (a,), grad_fn)


def embedding_rows(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def grad_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _result(table.data[ids], (table,), grad_fn)


def gather_last(a, idx) -> Tensor:
    """Pick ``a[..., idx[...]]`` along the last axis (one index per row)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise InvalidArgument(f"gather index shape {idx.shape} != {a.shape[:-1]}")
    picked = np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0]

    def grad_fn(g):
        ga = np.zeros_like(a.data)
        flat = ga.reshape(-1, a.shape[-1])
        rows = np.arange(flat.shape[0])
        np.add.at(flat, (rows, idx.reshape(-1)), g.reshape(-1))
        return (ga,)

    return _result(picked, (a,), grad_fn)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def softmax_temp(logits, tau: float, mask=None, axis: int = -1) -> Tensor:
    """Temperature softmax over ``axis``; masked positions get exactly 0.

    Masked-out entries are excluded from the normalization (padding never
    receives probability mass).  Stabilized by max subtraction.
    """
    if not tau > 0:
        raise InvalidArgument(f"softmax temperature must be positive, got {tau}")
    logits = as_tensor(logits)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mask = np.broadcast_to(mask, logits.shape)
        if not np.all(np.any(mask, axis=axis)):
            raise DegenerateInput("softmax over fully masked positions")
        x = np.where(mask, logits.data / tau, -np.inf)
    else:
        x = logits.data / tau
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner) / tau,)

    return _result(y, (logits,), grad_fn)


def softmax(logits, mask=None, axis: int = -1) -> Tensor:
    return softmax_temp(logits, 1.0, mask=mask, axis=axis)


def log_softmax(logits, axis: int = -1) -> Tensor:
    logits = as_tensor(logits)
    m = np.max(logits.data, axis=axis, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _result(out, (logits,), grad_fn)


# ---------------------------------------------------------------------------
# stop-gradient and backward
# ---------------------------------------------------------------------------


def detach(a) -> Tensor:
    """Same values, zero gradient contribution through the returned tensor."""
    a = as_tensor(a)
    return Tensor(a.data, requires_grad=False)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad tensor.

    One reverse sweep over the tape, visiting each recorded op exactly once.
    Tensors not on a path to ``loss`` are untouched.  Calling again without
    zeroing grads accumulates (multiple losses may share subgraphs).
    """
    if loss.data.size != 1:
        raise InvalidArgument(f"backward needs a scalar loss, got shape {loss.shape}")
    flows: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(op[0]) for op in tape.ops}
    keep: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, grad_fn in reversed(tape.ops):
        g = flows.pop(id(out), None)
        if g is None:
            continue
        if out.grad is not None:
            out.grad += g
        grads = grad_fn(g)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            key = id(t)
            if key in flows:
                flows[key] = flows[key] + gt
            else:
                flows[key] = gt
                keep[key] = t
    # whatever is left never appeared as an op output: these are the leaves
    for key, g in flows.items():
        t = keep[key]
        if t.requires_grad and key not in produced:
            t.grad += g.astype(t.grad.dtype, copy=False)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference checking helpers (64-bit only)
# ---------------------------------------------------------------------------


def numerical_gradient(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5,
                       coords=None) -> np.ndarray:
    """Central finite differences of scalar ``f()`` wrt entries of ``x``.

    ``f`` must rebuild its forward pass from current tensor values.  When
    ``coords`` is given only those flat indices are probed (others left 0).
    """
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gf = g.reshape(-1)
    indices = range(flat.size) if coords is None else coords
    with no_grad():
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
    return g


def gradient_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                   h: float = 1e-5, coords_per_param: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients of ``f`` and central differences.

    Relative error uses a 1e-6 denominator floor so near-zero derivatives do
    not blow up on finite-difference noise.
    """
    zero_grads(params)
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    worst = 0.0
    for p in params:
        if coords_per_param is None or coords_per_param >= p.size:
            coords = None
        else:
            coords = (rng or np.random.default_rng(0)).choice(
                p.size, size=coords_per_param, replace=False)
        num = numerical_gradient(f, p, h=h, coords=coords)
        ad = p.grad
        idx = np.arange(p.size) if coords is None else np.asarray(coords)
        a = ad.reshape(-1)[idx]
        n = num.reshape(-1)[idx]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        err = np.abs(a - n) / denom
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
