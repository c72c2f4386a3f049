"""Continuous-time prompt forecaster.

The first prompt is encoded into a latent state, a learned vector field is
integrated forward with the adaptive solver, and the latent state is decoded
back at whatever times are requested. Period tau of the training series sits
at normalized time tau/T, so training occupies [0, 1] and any future period
lands past 1; the model can be evaluated at arbitrary fractional times in
between or beyond.
"""
from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .der import DerSeries
from .dopri5 import IntegrationConfig, dopri5_integrate
from .layers import Linear
from .optim import Adam

log = logging.getLogger(__name__)


class OdeModel:
    def __init__(self, k: int, d: int, hidden: int = 256, lr: float = 1e-3,
                 field_init: str = "zero", solver: IntegrationConfig | None = None,
                 rng: np.random.Generator | None = None):
        if field_init not in ("zero", "small", "full"):
            raise ValueError(f"unknown field_init {field_init!r}")
        rng = rng or np.random.default_rng(0)
        self.k, self.d, self.hidden = k, d, hidden
        kd = k * d
        h = hidden
        self.enc1 = Linear(rng, kd, h, "tsm.ode.encoder.l1")
        self.enc2 = Linear(rng, h, h, "tsm.ode.encoder.l2")
        # field input is the latent state with the time appended
        self.f1 = Linear(rng, h + 1, h, "tsm.ode.field.l1")
        self.f2 = Linear(rng, h, h, "tsm.ode.field.l2")
        self.f3 = Linear(rng, h, h, "tsm.ode.field.l3")
        # zero keeps the initial trajectory constant (the stable default),
        # small starts near-constant, full leaves the init untouched
        if field_init == "zero":
            self.f3.w.data[:] = 0.0
        elif field_init == "small":
            self.f3.w.data *= 0.01
        self.dec1 = Linear(rng, h, h, "tsm.ode.decoder.l1")
        self.dec2 = Linear(rng, h, kd, "tsm.ode.decoder.l2")
        self.solver = solver or IntegrationConfig()
        self.opt = Adam(self.params(), lr=lr)
        self._failures_in_a_row = 0
        self.n_solver_failures = 0

    def params(self) -> list[Tensor]:
        out = []
        for layer in (self.enc1, self.enc2, self.f1, self.f2, self.f3,
                      self.dec1, self.dec2):
            out += layer.params()
        return out

    # -- pieces ---------------------------------------------------------

    def encode(self, z) -> Tensor:
        arr = np.asarray(getattr(z, "data", z))
        if arr.shape != (self.k, self.d):
            raise ValueError(f"prompt shape {arr.shape}, "
                             f"expected {(self.k, self.d)}")
        x = ag.constant(arr.reshape(1, self.k * self.d))
        return self.enc2(ag.tanh(self.enc1(x)))

    def field(self, y: Tensor, t: float) -> Tensor:
        tcol = ag.constant(np.array([[float(t)]]))
        x = ag.concat([y, tcol], axis=1)
        return self.f3(ag.tanh(self.f2(ag.tanh(self.f1(x)))))

    def decode(self, h: Tensor) -> Tensor:
        y = self.dec2(ag.tanh(self.dec1(h)))
        return ag.reshape(y, (self.k, self.d))

    # -- evaluation -----------------------------------------------------

    def forecast(self, z0, t: float) -> np.ndarray:
        """Prompt at normalized time t >= 0, integrating from z^0 at 0."""
        with ag.no_grad():
            return self.trajectory(z0, [t])[0]

    def trajectory(self, z0, times) -> list[np.ndarray]:
        """Decoded prompts at each requested time (non-decreasing, >= 0)."""
        times = [float(t) for t in times]
        if not times:
            return []
        if any(t < 0 for t in times):
            raise ValueError("times must be non-negative")
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("times must be non-decreasing")
        h0 = self.encode(z0)
        t_max = times[-1]
        if t_max == 0:
            return [self.decode(h0).data.copy() for _ in times]
        try:
            _, trace = dopri5_integrate(self.field, h0, 0.0, t_max, self.solver)
        except RuntimeError as e:
            raise RuntimeError(f"solver failed on [0, {t_max}]: {e}") from e
        out = []
        for t in times:
            h = h0 if t == 0.0 else trace.interpolate(t)
            out.append(self.decode(h).data.copy())
        return out

    # -- fitting --------------------------------------------------------

    def loss(self, series: DerSeries) -> Tensor:
        """Trajectory regression discretized on the period grid: one solve
        across [0, 1], decoded at each period time, mean-L1 averaged over
        periods."""
        times = series.times()
        targets = [ag.constant(e.z.data) for e in series.entries]
        h0 = self.encode(series.z0)
        _, trace = dopri5_integrate(self.field, h0, 0.0, float(times[-1]),
                                    self.solver)
        terms = []
        for t, target in zip(times[1:], targets):
            pred = self.decode(trace.interpolate(float(t)))
            terms.append(ag.l1_loss(pred, target))
        total = terms[0]
        for term in terms[1:]:
            total = ag.add(total, term)
        return ag.mul_const(total, 1.0 / len(terms))

    def fit_step(self, series: DerSeries) -> float:
        """One Adam step on the trajectory loss. A solver failure skips the
        step and returns nan; three failures in a row abort."""
        try:
            with ag.Tape() as tape:
                loss = self.loss(series)
                tape.backward(loss)
        except RuntimeError as e:
            self.opt.zero_grad()
            self.n_solver_failures += 1
            self._failures_in_a_row += 1
            if self._failures_in_a_row >= 3:
                raise RuntimeError(
                    f"3 consecutive solver failures "
                    f"({self.n_solver_failures} total): {e}") from e
            log.warning("solver failure, step skipped: %s", e)
            return float("nan")
        self._failures_in_a_row = 0
        self.opt.step()
        self.opt.zero_grad()
        return float(loss.data)
