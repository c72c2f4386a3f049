"""Reverse-mode autodiff over an explicit tape of dense numpy operations.

The engine is intentionally small. Arrays are float32 or float64, operations
are dense, and the only broadcasting allowed is row-wise bias addition plus
stacked (leading-axis) matmul. Every op records a node on the innermost
active tape; ``Tape.backward`` walks the node list once in reverse and
accumulates gradients into the inputs that asked for them.

Forward evaluation with no tape open records nothing and is safe to treat as
read-only with respect to gradients, which is how prediction paths run.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

_DEFAULT_DTYPE: type = np.float64


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created parameters and constants.

    float64 is the default so finite-difference checks resolve cleanly;
    throughput-sensitive runs switch to float32.
    """
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype).type
    if dt not in (np.float32, np.float64):
        raise ValueError("engine supports float32 or float64 only")
    _DEFAULT_DTYPE = dt


def default_dtype() -> type:
    return _DEFAULT_DTYPE


class Tensor:
    """A dense array plus a gradient slot.

    Leaf parameters are created with ``requires_grad=True``. The ``frozen``
    flag marks parameters that must not move; freezing also clears
    ``requires_grad`` so frozen branches of the graph record nothing.
    """

    __slots__ = ("data", "grad", "requires_grad", "frozen", "name")

    def __init__(self, data: np.ndarray, requires_grad: bool = False,
                 name: str | None = None):
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.frozen = False
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def freeze(self) -> None:
        self.frozen = True
        self.requires_grad = False

    def unfreeze(self) -> None:
        self.frozen = False
        self.requires_grad = True

    def __repr__(self):
        tag = self.name or "tensor"
        return f"Tensor({tag}, shape={self.data.shape}, grad={self.requires_grad})"


def param(data, name: str | None = None) -> Tensor:
    """Create a trainable leaf tensor in the engine's default dtype."""
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=False)


class _Node:
    __slots__ = ("out", "inputs", "fn")

    def __init__(self, out, inputs, fn):
        self.out = out
        self.inputs = inputs
        self.fn = fn


_TAPES: list["Tape"] = []


class Tape:
    """Explicit operation tape. Use as a context manager around a forward pass."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and accumulate grads into requiring leaves."""
        if loss.data.shape != ():
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for node in reversed(self.nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.fn(g)
            for t, gt in zip(node.inputs, grads):
                if gt is None or not t.requires_grad:
                    continue
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gt


_NOGRAD = object()


class no_grad:
    """Suppress recording inside an open tape (e.g. solver step-size probes)."""

    def __enter__(self):
        _TAPES.append(_NOGRAD)  # type: ignore[arg-type]
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False


def _record(out: Tensor, inputs: Sequence[Tensor], fn: Callable) -> None:
    if not _TAPES or _TAPES[-1] is _NOGRAD:
        return
    if not any(t.requires_grad for t in inputs):
        return
    out.requires_grad = True
    _TAPES[-1].nodes.append(_Node(out, tuple(inputs), fn))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # reduce a gradient produced under leading-axis broadcast back to `shape`
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matrix product. Both operands must be at least 2-D; leading
    axes follow numpy broadcast rules (a 2-D weight against a batched input
    is the common case)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = Tensor(a.data @ b.data)

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.shape)
        return ga, gb

    _record(out, (a, b), fn)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    _record(out, (a, b), lambda g: (g, g))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"sub shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data - b.data)
    _record(out, (a, b), lambda g: (g, -g))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    _record(out, (a, b), lambda g: (g * b.data, g * a.data))
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise bias: b is 1-D and added along the last axis of x."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError("bias must be 1-D and match the last axis")
    out = Tensor(x.data + b.data)

    def fn(g):
        gb = g.reshape(-1, b.shape[0]).sum(axis=0) if b.requires_grad else None
        return g, gb

    _record(out, (x, b), fn)
    return out


def neg(x: Tensor) -> Tensor:
    out = Tensor(-x.data)
    _record(out, (x,), lambda g: (-g,))
    return out


def add_const(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data + c)
    _record(out, (x,), lambda g: (g,))
    return out


def mul_const(x: Tensor, c: float) -> Tensor:
    out = Tensor(x.data * c)
    _record(out, (x,), lambda g: (g * c,))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    _record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    y = np.empty_like(d)
    pos = d >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    _record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    _record(out, (x,), lambda g: (g * (x.data > 0),))
    return out


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    out = Tensor(y)
    _record(out, (x,), lambda g: (g * y,))
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data))
    _record(out, (x,), lambda g: (g / x.data,))
    return out


def absolute(x: Tensor) -> Tensor:
    out = Tensor(np.abs(x.data))
    _record(out, (x,), lambda g: (g * np.sign(x.data),))
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through the closed interval [lo, hi]."""
    out = Tensor(np.clip(x.data, lo, hi))
    mask = (x.data >= lo) & (x.data <= hi)
    _record(out, (x,), lambda g: (g * mask,))
    return out


def softmax_last(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with an optional additive mask (a plain
    array of 0 / large-negative entries, broadcastable onto x)."""
    z = x.data + mask if mask is not None else x.data
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def fn(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    _record(out, (x,), fn)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale
    and shift with 1-D gain/bias."""
    d = x.data
    n = d.shape[-1]
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out = Tensor(xn * gain.data + bias.data)

    def fn(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = (g * xn).reshape(-1, n).sum(axis=0)
        if bias.requires_grad:
            gbias = g.reshape(-1, n).sum(axis=0)
        if x.requires_grad:
            gxn = g * gain.data
            # standard layer-norm backward through mean and variance
            gx = inv * (gxn
                        - gxn.mean(axis=-1, keepdims=True)
                        - xn * (gxn * xn).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    _record(out, (x, gain, bias), fn)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))
    _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=True),))
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.asarray(x.data.mean(), dtype=x.data.dtype))
    _record(out, (x,), lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    orig = x.shape
    _record(out, (x,), lambda g: (g.reshape(orig),))
    return out


def transpose(x: Tensor, axes) -> Tensor:
    out = Tensor(x.data.transpose(axes))
    inv = np.argsort(axes)
    _record(out, (x,), lambda g: (g.transpose(inv),))
    return out


def concat(xs: Sequence[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in xs], axis=axis))
    sizes = [t.shape[axis] for t in xs]
    splits = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, splits, axis=axis))

    _record(out, tuple(xs), fn)
    return out


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(x.data[idx].copy())

    def fn(g):
        buf = np.zeros_like(x.data)
        buf[idx] = g
        return (buf,)

    _record(out, (x,), fn)
    return out


def tile_leading(x: Tensor, n: int) -> Tensor:
    """Replicate x along a new leading axis (used to share one prompt block
    across a batch). Gradient sums over the copies."""
    out = Tensor(np.repeat(x.data[None], n, axis=0))
    _record(out, (x,), lambda g: (g.sum(axis=0),))
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of an embedding table by integer id array."""
    out = Tensor(table.data[ids])

    def fn(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (buf,)

    _record(out, (table,), fn)
    return out


# ---------------------------------------------------------------------------
# losses


def bce_loss(p: Tensor, y: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Mean binary cross entropy against hard labels.

    Probabilities are clamped to [eps, 1-eps] before the log so saturated
    predictions stay finite; eps=1e-7 is part of the numeric contract.
    """
    y = np.asarray(y, dtype=p.data.dtype)
    if y.shape != p.shape:
        raise ValueError(f"labels shape {y.shape} does not match {p.shape}")
    pc = clip(p, eps, 1.0 - eps)
    pos = mul(log(pc), Tensor(y))
    neg_term = mul(log(add_const(neg(pc), 1.0)), Tensor(1.0 - y))
    return neg(mean_all(add(pos, neg_term)))


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute error over all elements (mean, not sum)."""
    return mean_all(absolute(sub(a, b)))
