"""Discrete-time prompt forecaster.

One LSTM layer over the flattened prompt sequence. The model is time-blind:
it sees the series as evenly spaced steps and always predicts the next one,
whatever the calendar gap to the target actually is.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .der import DerSeries
from .layers import linear_init
from .optim import Adam


class LstmModel:
    def __init__(self, k: int, d: int, hidden: int = 128, lr: float = 1e-3,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.k, self.d, self.hidden = k, d, hidden
        kd = k * d
        h = hidden
        self.w_in = ag.param(linear_init(rng, kd, h), name="tsm.lstm.in.w")
        self.b_in = ag.param(np.zeros(h), name="tsm.lstm.in.b")
        self.w_x = ag.param(linear_init(rng, h, 4 * h), name="tsm.lstm.cell.wx")
        self.w_h = ag.param(linear_init(rng, h, 4 * h), name="tsm.lstm.cell.wh")
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0  # forget gate starts open
        self.b_cell = ag.param(bias, name="tsm.lstm.cell.b")
        self.w_out = ag.param(linear_init(rng, h, kd), name="tsm.lstm.out.w")
        self.b_out = ag.param(np.zeros(kd), name="tsm.lstm.out.b")
        self.opt = Adam(self.params(), lr=lr)

    def params(self) -> list[Tensor]:
        return [self.w_in, self.b_in, self.w_x, self.w_h, self.b_cell,
                self.w_out, self.b_out]

    def _cell(self, x: Tensor, h: Tensor, c: Tensor):
        n = self.hidden
        pre = ag.add(ag.add_bias(ag.matmul(x, self.w_x), self.b_cell),
                     ag.matmul(h, self.w_h))
        i = ag.sigmoid(ag.slice_axis(pre, 1, 0, n))
        f = ag.sigmoid(ag.slice_axis(pre, 1, n, 2 * n))
        g = ag.tanh(ag.slice_axis(pre, 1, 2 * n, 3 * n))
        o = ag.sigmoid(ag.slice_axis(pre, 1, 3 * n, 4 * n))
        c = ag.add(ag.mul(f, c), ag.mul(i, g))
        return ag.mul(o, ag.tanh(c)), c

    def _run(self, seq: list[Tensor]) -> list[Tensor]:
        """Hidden state after each element of seq."""
        h = ag.constant(np.zeros((1, self.hidden)))
        c = ag.constant(np.zeros((1, self.hidden)))
        outs = []
        for z in seq:
            x = ag.add_bias(ag.matmul(ag.reshape(z, (1, self.k * self.d)),
                                      self.w_in), self.b_in)
            h, c = self._cell(x, h, c)
            outs.append(h)
        return outs

    def _project(self, h: Tensor) -> Tensor:
        y = ag.add_bias(ag.matmul(h, self.w_out), self.b_out)
        return ag.reshape(y, (self.k, self.d))

    def _as_inputs(self, history) -> list[Tensor]:
        out = []
        for z in history:
            arr = np.asarray(getattr(z, "data", z))
            if arr.shape != (self.k, self.d):
                raise ValueError(f"history element shape {arr.shape}, "
                                 f"expected {(self.k, self.d)}")
            out.append(ag.constant(arr))
        return out

    def forecast(self, history) -> np.ndarray:
        """Next prompt from the whole history z^0..z^{T}."""
        if not len(history):
            raise ValueError("empty history")
        with ag.no_grad():
            outs = self._run(self._as_inputs(history))
            return self._project(outs[-1]).data.copy()

    def loss(self, series: DerSeries) -> Tensor:
        """Teacher-forced regression: predict each z^tau from the true
        prefix, mean-L1 per step, averaged over the T steps."""
        traj = self._as_inputs(series.trajectory())
        if len(traj) < 2:
            raise ValueError("need at least one target period")
        outs = self._run(traj[:-1])
        terms = [ag.l1_loss(self._project(h), target)
                 for h, target in zip(outs, traj[1:])]
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
        return float(loss.data)
