"""Sequence encoder-decoder prompt forecaster with dynamics pre-training.

States are flattened prompts arranged along a time axis. A kernel-3
convolution over time plus learned position embeddings feed a small
self-attention encoder; a decoder queries arbitrary (fractionally
interpolated) positions against the encoded memory. Separate linear heads
read out reconstructions of the input states and forecasts of future ones.
Pre-training on synthetic trajectory corpora teaches the generic shape of
smooth dynamics before the model ever sees a prompt series.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .der import DerSeries
from .layers import DecoderBlock, EncoderBlock, LayerNorm, Linear, linear_init
from .optim import Adam
from .synthetic import TrajectoryCorpus


class PtModel:
    def __init__(self, k: int, d: int, model_dim: int = 128, n_heads: int = 4,
                 n_layers: int = 2, max_pos: int = 64, lr: float = 1e-3,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.k, self.d, self.dim, self.max_pos = k, d, model_dim, max_pos
        kd = k * d
        m = model_dim
        # one weight per tap of the kernel-3 convolution over the time axis
        self.conv_w = [ag.param(linear_init(rng, kd, m) / np.sqrt(3),
                                name=f"tsm.pt.conv.w{i}") for i in range(3)]
        self.conv_b = ag.param(np.zeros(m), name="tsm.pt.conv.b")
        self.pos = ag.param(rng.normal(0.0, 0.02, size=(max_pos, m)),
                            name="tsm.pt.pos")
        self.enc_blocks = [EncoderBlock(rng, m, n_heads, 4 * m, f"tsm.pt.enc{i}")
                           for i in range(n_layers)]
        self.enc_norm = LayerNorm(m, "tsm.pt.enc_norm")
        self.dec_blocks = [DecoderBlock(rng, m, n_heads, 4 * m, f"tsm.pt.dec{i}")
                           for i in range(n_layers)]
        self.dec_norm = LayerNorm(m, "tsm.pt.dec_norm")
        self.recon_head = Linear(rng, m, kd, "tsm.pt.head_in")
        self.forecast_head = Linear(rng, m, kd, "tsm.pt.head_out")
        self.pretrained = False
        self.fitted = False
        self.opt = Adam(self.params(), lr=lr)

    def params(self) -> list[Tensor]:
        out = list(self.conv_w) + [self.conv_b, self.pos]
        for b in self.enc_blocks + self.dec_blocks:
            out += b.params()
        return (out + self.enc_norm.params() + self.dec_norm.params()
                + self.recon_head.params() + self.forecast_head.params())

    # -- sequence plumbing ----------------------------------------------

    def _conv(self, x: Tensor) -> Tensor:
        b, s, kd = x.shape
        pad = ag.constant(np.zeros((b, 1, kd)))
        xp = ag.concat([pad, x, pad], axis=1)
        taps = [ag.slice_axis(xp, 1, i, i + s) for i in range(3)]
        y = ag.matmul(taps[0], self.conv_w[0])
        y = ag.add(y, ag.matmul(taps[1], self.conv_w[1]))
        y = ag.add(y, ag.matmul(taps[2], self.conv_w[2]))
        return ag.add_bias(y, self.conv_b)

    def _pos_rows(self, positions) -> Tensor:
        """Rows of the position table; fractional positions interpolate
        linearly between the two neighbouring rows."""
        pos = np.asarray(positions, dtype=np.float64)
        if pos.min() < 0 or pos.max() > self.max_pos - 1:
            raise ValueError(f"position outside [0, {self.max_pos - 1}]")
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, self.max_pos - 1)
        frac = pos - lo
        rows_lo = ag.embedding(self.pos, lo)
        rows_hi = ag.embedding(self.pos, hi)
        w_hi = np.repeat(frac[:, None], self.dim, axis=1)
        return ag.add(ag.mul(rows_lo, ag.constant(1.0 - w_hi)),
                      ag.mul(rows_hi, ag.constant(w_hi)))

    def encode_seq(self, states: Tensor, positions) -> Tensor:
        b = states.shape[0]
        x = ag.add(self._conv(states),
                   ag.tile_leading(self._pos_rows(positions), b))
        for block in self.enc_blocks:
            x = block(x)
        return self.enc_norm(x)

    def decode_queries(self, memory: Tensor, q_positions) -> Tensor:
        b = memory.shape[0]
        q = ag.tile_leading(self._pos_rows(q_positions), b)
        for block in self.dec_blocks:
            q = block(q, memory)
        return self.dec_norm(q)

    def reconstruct(self, states: Tensor, positions) -> Tensor:
        return self.recon_head(self.encode_seq(states, positions))

    def forecast_raw(self, states: Tensor, in_positions, out_positions) -> Tensor:
        memory = self.encode_seq(states, in_positions)
        return self.forecast_head(self.decode_queries(memory, out_positions))

    # -- pre-training on synthetic dynamics ------------------------------

    def pretrain_loss(self, states: np.ndarray, split: int) -> Tensor:
        """Reconstruction of the first `split` states plus forecast of the
        rest, the two mean-L1 terms summed."""
        b, g, kd = states.shape
        if kd != self.k * self.d:
            raise ValueError(f"state width {kd} != {self.k * self.d}")
        if not 0 < split < g:
            raise ValueError("split must leave both input and output states")
        in_states = ag.constant(states[:, :split])
        out_states = ag.constant(states[:, split:])
        in_pos = np.arange(split)
        out_pos = np.arange(split, g)
        memory = self.encode_seq(in_states, in_pos)
        recon = self.recon_head(memory)
        pred = self.forecast_head(self.decode_queries(memory, out_pos))
        return ag.add(ag.l1_loss(recon, in_states),
                      ag.l1_loss(pred, out_states))

    def pretrain(self, corpus: TrajectoryCorpus, epochs: int,
                 batch_size: int = 8,
                 rng: np.random.Generator | None = None) -> list[float]:
        if not corpus.trajectories:
            raise ValueError("empty corpus")
        rng = rng or np.random.default_rng(0)
        flat = np.stack([t.states.reshape(len(t.states), -1)
                         for t in corpus.trajectories])
        n = len(flat)
        losses = []
        for _ in range(epochs):
            order = rng.permutation(n)
            batch_losses = []
            for start in range(0, n, batch_size):
                batch = flat[order[start:start + batch_size]]
                with ag.Tape() as tape:
                    loss = self.pretrain_loss(batch, corpus.split_index)
                    tape.backward(loss)
                self.opt.step()
                self.opt.zero_grad()
                batch_losses.append(float(loss.data))
            losses.append(float(np.mean(batch_losses)))
        self.pretrained = True
        return losses

    # -- prompt series fitting -------------------------------------------

    def _series_states(self, series: DerSeries):
        traj = series.trajectory()
        flat = np.stack([t.data.reshape(-1) for t in traj])
        positions = np.array([0] + [e.abs_index - series.z0_abs_index
                                    for e in series.entries], dtype=np.float64)
        return flat, positions

    def forecast(self, series: DerSeries, position: float,
                 allow_cold: bool = False) -> np.ndarray:
        """Prompt at `position` periods after z^0, conditioned on the whole
        series. Fractional positions are valid."""
        if not (self.pretrained or self.fitted or allow_cold):
            raise RuntimeError("model is neither pre-trained nor fitted; "
                               "pass allow_cold=True to force a forecast")
        flat, positions = self._series_states(series)
        with ag.no_grad():
            out = self.forecast_raw(ag.constant(flat[None]), positions,
                                    [float(position)])
        return out.data.reshape(self.k, self.d).copy()

    def loss(self, series: DerSeries) -> Tensor:
        """Teacher-forced: each period is forecast from the true prefix at
        its own position; mean-L1 per period, averaged."""
        flat, positions = self._series_states(series)
        if len(flat) < 2:
            raise ValueError("need at least one target period")
        terms = []
        for i in range(1, len(flat)):
            pred = self.forecast_raw(ag.constant(flat[None, :i]),
                                     positions[:i], [positions[i]])
            target = ag.constant(flat[i].reshape(1, 1, -1))
            terms.append(ag.l1_loss(pred, target))
        total = terms[0]
        for t in terms[1:]:
            total = ag.add(total, t)
        return ag.mul_const(total, 1.0 / len(terms))

    def fit_step(self, series: DerSeries) -> float:
        with ag.Tape() as tape:
            loss = self.loss(series)
            tape.backward(loss)
        self.opt.step()
        self.opt.zero_grad()
        self.fitted = True
        return float(loss.data)
