"""Dense tensors with define-by-run reverse-mode differentiation.

Every op that receives at least one tensor with ``requires_grad`` attaches a
record to its output.  :func:`backward` collects the records reachable from a
scalar loss into a topologically ordered :class:`Tape` and runs it in reverse.
Gradients are accumulated into ``.grad`` of leaf tensors only.

Ops act on the trailing two axes ("rows" x features); any leading axes are
treated as a batch.
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_strict = contextvars.ContextVar("strict", default=False)

LN_EPS = 1e-5


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def strict_mode(enabled: bool = True):
    """Raise NonFiniteError as soon as an op sees or produces inf/nan."""
    token = _strict.set(enabled)
    try:
        yield
    finally:
        _strict.reset(token)


@dataclass
class Record:
    op: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_record", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._record: Record | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar()

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)


def _not_scalar():
    raise ShapeError("item() needs a single-element tensor")


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _check_finite(arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError("non-finite value encountered in strict mode")


def _result(op, data, inputs, backward) -> Tensor:
    if _strict.get():
        _check_finite([t.data for t in inputs])
        _check_finite([data])
    out = Tensor(data)
    if _grad_enabled.get() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = Record(op, tuple(inputs), backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _result(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _result(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _result(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype)
    return _result("sigmoid", s, (a,), lambda g: (g * s * (1 - s),))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _result("abs", np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result("square", a.data * a.data, (a,), lambda g: (2 * g * a.data,))


# ---- reductions and shape ops -----------------------------------------------


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", np.asarray(out, dtype=a.dtype), (a,), backward)


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    return _result(
        "mean",
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(a.shape, g / n, dtype=a.dtype),),
    )


def mean_rows(a) -> Tensor:
    """Mean over the row axis, keeping it: ``(..., R, C) -> (..., 1, C)``."""
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError("mean_rows needs at least 2 dims")
    rows = a.shape[-2]
    return _result(
        "mean_rows",
        a.data.mean(axis=-2, keepdims=True),
        (a,),
        lambda g: (np.broadcast_to(g / rows, a.shape).copy(),),
    )


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def concat_rows(tensors: Sequence) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat_rows needs at least one tensor")
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:-2] != ref[:-2] or t.shape[-1] != ref[-1]:
            raise ShapeError(f"concat_rows: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[-2] for t in ts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[..., bounds[i] : bounds[i + 1], :] for i in range(len(ts)))

    return _result("concat_rows", np.concatenate([t.data for t in ts], axis=-2), ts, backward)


def slice_rows(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    rows = a.shape[-2]
    if not 0 <= start < stop <= rows:
        raise ShapeError(f"slice_rows [{start}:{stop}] out of range for {rows} rows")

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[..., start:stop, :] = g
        return (full,)

    return _result("slice_rows", a.data[..., start:stop, :].copy(), (a,), backward)


def take(a, index, axis: int = 0) -> Tensor:
    """Gather along ``axis``; indices may repeat."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, (slice(None),) * (axis % a.ndim) + (idx,), g)
        return (full,)

    return _result("take", np.take(a.data, idx, axis=axis), (a,), backward)


# ---- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result("matmul", a.data @ b.data, (a, b), backward)


def affine(x, W, bias=None) -> Tensor:
    """``x @ W + bias`` with ``W`` of shape (in, out)."""
    x, W = as_tensor(x), as_tensor(W)
    if W.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: input width {x.shape[-1]} does not match weight {W.shape}")
    inputs = [x, W]
    out = x.data @ W.data
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (W.shape[1],):
            raise ShapeError(f"affine: bias shape {bias.shape} != ({W.shape[1]},)")
        out = out + bias.data
        inputs.append(bias)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        grads = [
            g @ W.data.T if x.requires_grad else None,
            x.data.reshape(-1, x.shape[-1]).T @ g2 if W.requires_grad else None,
        ]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return _result("affine", out, inputs, backward)


def _softmax(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(a, mask=None) -> Tensor:
    """Row-wise softmax; ``mask`` (broadcastable bool) hides entries."""
    a = as_tensor(a)
    p = _softmax(a.data, None if mask is None else np.asarray(mask, dtype=bool))

    def backward(g):
        return (p * (g - np.sum(g * p, axis=-1, keepdims=True)),)

    return _result("softmax_rows", p, (a,), backward)


def layer_norm_rows(x, gamma=None, beta=None, eps: float = LN_EPS) -> Tensor:
    x = as_tensor(x)
    inputs = [x]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        gamma = as_tensor(gamma)
        out = out * gamma.data
        inputs.append(gamma)
    if beta is not None:
        beta = as_tensor(beta)
        out = out + beta.data
        inputs.append(beta)

    def backward(g):
        grads = []
        gx = g * gamma.data if gamma is not None else g
        dx = inv * (
            gx - gx.mean(axis=-1, keepdims=True) - xhat * np.mean(gx * xhat, axis=-1, keepdims=True)
        )
        grads.append(dx)
        if gamma is not None:
            grads.append((g * xhat).reshape(-1, g.shape[-1]).sum(axis=0))
        if beta is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return _result("layer_norm_rows", out.astype(x.dtype, copy=False), inputs, backward)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    *lead, rows, width = x.shape
    return np.swapaxes(x.reshape(*lead, rows, n_heads, width // n_heads), -2, -3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    x = np.swapaxes(x, -2, -3)
    *lead, rows, heads, dh = x.shape
    return x.reshape(*lead, rows, heads * dh)


def scaled_dot_attention(q, k, v, n_heads: int, key_mask=None) -> Tensor:
    """Multi-head softmax(QK^T / sqrt(d_head)) V on already-projected inputs.

    ``q``: (..., Tq, D); ``k``, ``v``: (..., Tk, D); ``key_mask``: (..., Tk)
    bool, False entries are never attended to.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    width = q.shape[-1]
    if k.shape[-1] != width or v.shape != k.shape:
        raise ShapeError(f"attention: shapes q={q.shape} k={k.shape} v={v.shape}")
    if n_heads < 1 or width % n_heads:
        raise ShapeError(f"n_heads={n_heads} must divide width {width}")
    scale = 1.0 / math.sqrt(width // n_heads)
    qh = _split_heads(q.data, n_heads)
    kh = _split_heads(k.data, n_heads)
    vh = _split_heads(v.data, n_heads)
    scores = (qh @ np.swapaxes(kh, -1, -2)) * scale
    mask = None
    if key_mask is not None:
        mask = np.asarray(key_mask, dtype=bool)[..., None, None, :]
    p = _softmax(scores, mask).astype(q.dtype, copy=False)
    out = _merge_heads(p @ vh)

    def backward(g):
        gh = _split_heads(g, n_heads)
        dv = np.swapaxes(p, -1, -2) @ gh
        dp = gh @ np.swapaxes(vh, -1, -2)
        ds = p * (dp - np.sum(dp * p, axis=-1, keepdims=True)) * scale
        dq = ds @ kh
        dk = np.swapaxes(ds, -1, -2) @ qh
        return (
            _unbroadcast(_merge_heads(dq), q.shape),
            _unbroadcast(_merge_heads(dk), k.shape),
            _unbroadcast(_merge_heads(dv), v.shape),
        )

    return _result("attention", out, (q, k, v), backward)


# ---- backward pass ----------------------------------------------------------


class Tape:
    """Records reachable from an output, ordered so inputs precede users."""

    def __init__(self, records: list[tuple[Tensor, Record]]):
        self.records = records

    @classmethod
    def from_output(cls, out: Tensor) -> "Tape":
        order: list[tuple[Tensor, Record]] = []
        seen: set[int] = set()
        stack = [(out, False)]
        while stack:
            t, expanded = stack.pop()
            if t._record is None:
                continue
            if expanded:
                order.append((t, t._record))
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for inp in t._record.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.records)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor requiring grad")
    if loss._record is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
        return
    tape = Tape.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t, rec in reversed(tape.records):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            gi = np.asarray(gi, dtype=inp.dtype)
            if inp._record is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            elif id(inp) in grads:
                grads[id(inp)] = grads[id(inp)] + gi
            else:
                grads[id(inp)] = gi
