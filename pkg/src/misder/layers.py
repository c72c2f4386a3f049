"""Shared neural building blocks on top of the autodiff engine.

Everything here works on batched sequences shaped (B, S, D). Attention
masks are plain numpy arrays added to the pre-softmax scores: 0 keeps a
key, NEG (a large negative number, not -inf, so fully masked rows of
padding queries stay NaN-free) removes it.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor

NEG = -1e30


def linear_init(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    # fan-in scaled normal, the usual choice for tanh/relu stacks this small
    return rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_out))


class Linear:
    def __init__(self, rng, n_in: int, n_out: int, name: str, bias: bool = True):
        self.w = ag.param(linear_init(rng, n_in, n_out), name=f"{name}.w")
        self.b = ag.param(np.zeros(n_out), name=f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = ag.matmul(x, self.w)
        return ag.add_bias(y, self.b) if self.b is not None else y

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]


class LayerNorm:
    def __init__(self, dim: int, name: str):
        self.gain = ag.param(np.ones(dim), name=f"{name}.gain")
        self.bias = ag.param(np.zeros(dim), name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gain, self.bias)

    def params(self):
        return [self.gain, self.bias]


class MultiHeadAttention:
    """Standard scaled dot-product attention with n_heads splits of dim."""

    def __init__(self, rng, dim: int, n_heads: int, name: str):
        if dim % n_heads:
            raise ValueError("dim must divide by n_heads")
        self.dim = dim
        self.n_heads = n_heads
        self.wq = Linear(rng, dim, dim, f"{name}.wq")
        # a key bias shifts every score of a query equally, which softmax
        # cancels; the parameter would be a pure null direction
        self.wk = Linear(rng, dim, dim, f"{name}.wk", bias=False)
        self.wv = Linear(rng, dim, dim, f"{name}.wv")
        self.wo = Linear(rng, dim, dim, f"{name}.wo")

    def _heads(self, x: Tensor, b: int, s: int) -> Tensor:
        dh = self.dim // self.n_heads
        return ag.transpose(ag.reshape(x, (b, s, self.n_heads, dh)), (0, 2, 1, 3))

    def __call__(self, q_in: Tensor, kv_in: Tensor,
                 mask: np.ndarray | None = None) -> Tensor:
        b, sq, _ = q_in.shape
        sk = kv_in.shape[1]
        dh = self.dim // self.n_heads
        q = self._heads(self.wq(q_in), b, sq)
        k = self._heads(self.wk(kv_in), b, sk)
        v = self._heads(self.wv(kv_in), b, sk)
        scores = ag.mul_const(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))),
                              1.0 / np.sqrt(dh))
        attn = ag.softmax_last(scores, mask)
        mixed = ag.matmul(attn, v)  # (b, h, sq, dh)
        merged = ag.reshape(ag.transpose(mixed, (0, 2, 1, 3)), (b, sq, self.dim))
        return self.wo(merged)

    def params(self):
        return self.wq.params() + self.wk.params() + self.wv.params() + self.wo.params()


class EncoderBlock:
    """Pre-norm self-attention block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, rng, dim: int, n_heads: int, ff_dim: int, name: str):
        self.ln1 = LayerNorm(dim, f"{name}.ln1")
        self.attn = MultiHeadAttention(rng, dim, n_heads, f"{name}.attn")
        self.ln2 = LayerNorm(dim, f"{name}.ln2")
        self.ff1 = Linear(rng, dim, ff_dim, f"{name}.ff1")
        self.ff2 = Linear(rng, ff_dim, dim, f"{name}.ff2")

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(x)
        x = ag.add(x, self.attn(h, h, mask))
        x = ag.add(x, self.ff2(ag.relu(self.ff1(self.ln2(x)))))
        return x

    def params(self):
        return (self.ln1.params() + self.attn.params() + self.ln2.params()
                + self.ff1.params() + self.ff2.params())


class DecoderBlock:
    """Pre-norm block with query self-attention plus cross-attention over a
    separate memory sequence."""

    def __init__(self, rng, dim: int, n_heads: int, ff_dim: int, name: str):
        self.ln1 = LayerNorm(dim, f"{name}.ln1")
        self.self_attn = MultiHeadAttention(rng, dim, n_heads, f"{name}.self")
        self.ln2 = LayerNorm(dim, f"{name}.ln2")
        self.cross_attn = MultiHeadAttention(rng, dim, n_heads, f"{name}.cross")
        self.ln3 = LayerNorm(dim, f"{name}.ln3")
        self.ff1 = Linear(rng, dim, ff_dim, f"{name}.ff1")
        self.ff2 = Linear(rng, ff_dim, dim, f"{name}.ff2")

    def __call__(self, q: Tensor, memory: Tensor,
                 cross_mask: np.ndarray | None = None) -> Tensor:
        h = self.ln1(q)
        q = ag.add(q, self.self_attn(h, h))
        q = ag.add(q, self.cross_attn(self.ln2(q), memory, cross_mask))
        q = ag.add(q, self.ff2(ag.relu(self.ff1(self.ln3(q)))))
        return q

    def params(self):
        return (self.ln1.params() + self.self_attn.params() + self.ln2.params()
                + self.cross_attn.params() + self.ln3.params()
                + self.ff1.params() + self.ff2.params())


def key_padding_mask(valid: np.ndarray, dtype=np.float64) -> np.ndarray:
    """(B, S) boolean validity -> (B, 1, 1, S) additive attention mask."""
    mask = np.where(valid[:, None, None, :], 0.0, NEG)
    return mask.astype(dtype)


def mean_pool(x: Tensor, valid: np.ndarray) -> Tensor:
    """Mean over valid positions per sample. valid is (B, S) boolean with at
    least one True per row."""
    counts = valid.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("mean_pool needs at least one valid position per row")
    w = (valid / counts).astype(x.dtype)[:, None, :]  # (B, 1, S)
    pooled = ag.matmul(Tensor(w), x)
    return ag.reshape(pooled, (x.shape[0], x.shape[2]))
