"""Lightweight text veracity detector conditioned on an environmental prompt.

The model embeds token ids, prepends a K x D prompt block to the embedded
sequence, runs a small self-attention encoder over the joint sequence (PAD
text positions masked, prompt rows always visible), pools, and applies a
two-layer sigmoid classifier. Scale stands in for a large pre-trained
backbone: two encoder layers, model dim D, trained from scratch during
warm-up and frozen afterwards.

Parameter groups are named embedding / extractor / classifier so freeze
contracts and checkpoints can address them by prefix.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .data import PAD
from .layers import EncoderBlock, LayerNorm, Linear, key_padding_mask, mean_pool


class Detector:
    def __init__(self, vocab_size: int, d: int = 64, n_heads: int = 4,
                 n_layers: int = 2, pooling: str = "mean",
                 rng: np.random.Generator | None = None):
        if pooling not in ("mean", "cls"):
            raise ValueError(f"unknown pooling {pooling!r}")
        rng = rng or np.random.default_rng(0)
        self.vocab_size = vocab_size
        self.d = d
        self.pooling = pooling
        self.embedding = ag.param(rng.normal(0.0, 0.1, size=(vocab_size, d)),
                                  name="embedding.table")
        self.blocks = [EncoderBlock(rng, d, n_heads, 4 * d, f"extractor.block{i}")
                       for i in range(n_layers)]
        self.final_norm = LayerNorm(d, "extractor.norm")
        self.cls1 = Linear(rng, d, d // 2, "classifier.l1")
        self.cls2 = Linear(rng, d // 2, 1, "classifier.l2")

    # -- parameter groups ---------------------------------------------------

    def embedding_params(self) -> list[Tensor]:
        return [self.embedding]

    def extractor_params(self) -> list[Tensor]:
        out = []
        for b in self.blocks:
            out += b.params()
        return out + self.final_norm.params()

    def classifier_params(self) -> list[Tensor]:
        return self.cls1.params() + self.cls2.params()

    def params(self) -> list[Tensor]:
        return (self.embedding_params() + self.extractor_params()
                + self.classifier_params())

    def freeze(self) -> None:
        for p in self.params():
            p.freeze()

    def unfreeze(self) -> None:
        for p in self.params():
            p.unfreeze()

    def is_frozen(self) -> bool:
        return all(p.frozen for p in self.params())

    # -- forward ------------------------------------------------------------

    def embed(self, ids: np.ndarray) -> Tensor:
        """Token ids (B, L) -> embedded rows (B, L, D). PAD rows embed like
        any other id; they are masked later, in attention."""
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            raise ValueError(f"token id outside [0, {self.vocab_size})")
        return ag.embedding(self.embedding, ids)

    def predict_from_embedding(self, z: Tensor, e: Tensor,
                               text_valid: np.ndarray) -> Tensor:
        """[z ; e] -> probability per article. text_valid is (B, L) boolean;
        all K prompt rows are always attendable and pooled."""
        b, seq_len, _ = e.shape
        k = z.shape[0]
        x = ag.concat([ag.tile_leading(z, b), e], axis=1)
        valid = np.concatenate([np.ones((b, k), dtype=bool), text_valid], axis=1)
        mask = key_padding_mask(valid, dtype=x.dtype)
        for i, block in enumerate(self.blocks):
            x = block(x, mask)
            _assert_finite(x, f"extractor.block{i}")
        x = self.final_norm(x)
        if self.pooling == "mean":
            pooled = mean_pool(x, valid)
        else:
            pooled = ag.reshape(ag.slice_axis(x, 1, k, k + 1), (b, self.d))
        _assert_finite(pooled, "pooling")
        h = ag.relu(self.cls1(pooled))
        logit = self.cls2(h)
        _assert_finite(logit, "classifier")
        return ag.reshape(ag.sigmoid(logit), (b,))

    def predict_with_der(self, z: Tensor, ids: np.ndarray) -> Tensor:
        """Probability of the fake class for each article in ids (B, L) or a
        single article (L,)."""
        if ids.ndim == 1:
            ids = ids[None]
        e = self.embed(ids)
        _assert_finite(e, "embedding")
        return self.predict_from_embedding(z, e, ids != PAD)


def _assert_finite(x: Tensor, layer: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise RuntimeError(f"non-finite activation in {layer}")


def new_der(rng: np.random.Generator, k: int, d: int, tau: int,
            scale: float = 0.1) -> Tensor:
    return ag.param(rng.normal(0.0, scale, size=(k, d)), name=f"der.{tau}")


def warmup_loss(detector: Detector, z0: Tensor, ids: np.ndarray,
                labels: np.ndarray) -> Tensor:
    """Mean BCE of the batch; gradients reach every detector group plus z0."""
    if len(ids) == 0:
        raise ValueError("empty batch")
    p = detector.predict_with_der(z0, ids)
    return ag.bce_loss(p, labels.astype(np.float64))
