"""Adaptive Dormand-Prince 5(4) integration with tape gradients.

The solver differentiates through its accepted steps (discretize then
optimize): stage combinations are built from tape ops so reverse mode sees
the exact computed trajectory, while error norms, acceptance tests, and
step-size control run on detached float64 values and never enter the graph.

Dense output between accepted steps is a cubic Hermite interpolant over the
step endpoints and their derivatives (both already available thanks to
FSAL), giving O(h^4) interpolation error to match the integration order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor

# classical Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
# b5 - b4, the embedded error weights (stage 7 = FSAL stage included)
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_ORDER = 5
_PI_ALPHA = 0.7 / _ORDER
_PI_BETA = 0.4 / _ORDER


@dataclass
class IntegrationConfig:
    rtol: float = 1e-6
    atol: float = 1e-8
    max_steps: int = 10000
    safety: float = 0.9
    min_factor: float = 0.2
    max_factor: float = 10.0

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("rtol and atol must be positive")
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")


@dataclass
class _Step:
    t0: float
    t1: float
    y0: Tensor
    y1: Tensor
    f0: Tensor
    f1: Tensor


@dataclass
class SolveTrace:
    t_start: float
    t_end: float
    steps: list = field(default_factory=list)
    history: list = field(default_factory=list)  # (t, h, err) per attempt
    n_feval: int = 0
    n_accepted: int = 0
    n_rejected: int = 0

    def interpolate(self, t: float) -> Tensor:
        """Differentiable state estimate at any time inside the solve span."""
        if not self.steps:
            raise ValueError("empty trace has no interpolant")
        lo, hi = self.t_start, self.t_end
        if not (lo - 1e-12 <= t <= hi + 1e-12):
            raise ValueError(f"time {t} outside solved span [{lo}, {hi}]")
        t = min(max(t, lo), hi)
        for st in self.steps:
            if t <= st.t1 or st is self.steps[-1]:
                break
        if t == st.t0:
            return st.y0
        if t == st.t1:
            return st.y1
        h = st.t1 - st.t0
        s = (t - st.t0) / h
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        out = ag.add(ag.mul_const(st.y0, h00), ag.mul_const(st.y1, h01))
        out = ag.add(out, ag.mul_const(st.f0, h10 * h))
        return ag.add(out, ag.mul_const(st.f1, h11 * h))


def _rms(x: np.ndarray) -> float:
    # inf is a legitimate outcome for diverging states; the controller rejects
    with np.errstate(over="ignore"):
        return float(np.sqrt(np.mean(np.square(x))))


def _check_finite(k: Tensor, t: float) -> None:
    if not np.all(np.isfinite(k.data)):
        raise RuntimeError(f"non-finite field output at t={t}")


def _initial_step(field_fn, y0: Tensor, f0: Tensor, t0: float, span: float,
                  cfg: IntegrationConfig) -> float:
    """Hairer's starting-step heuristic on detached values."""
    y = y0.data.astype(np.float64)
    f = f0.data.astype(np.float64)
    scale = cfg.atol + cfg.rtol * np.abs(y)
    with np.errstate(over="ignore"):
        d0 = _rms(y / scale)
        d1 = _rms(f / scale)
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        if not np.isfinite(h0) or h0 <= 0:
            # wildly large field values; start tiny, the controller recovers
            h0 = 1e-6
        h0 = min(h0, span)
        with ag.no_grad():
            probe = Tensor((y + h0 * f).astype(y0.dtype))
            f1 = field_fn(probe, t0 + h0)
        d2 = _rms((f1.data.astype(np.float64) - f) / scale) / h0
        if d1 <= 1e-15 and d2 <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** (1.0 / _ORDER)
        if not np.isfinite(h1) or h1 <= 0:
            h1 = max(1e-6, h0 * 1e-3)
    return min(100 * h0, h1, span)


def dopri5_integrate(field_fn, z0: Tensor, t0: float, t1: float,
                     cfg: IntegrationConfig | None = None) -> tuple[Tensor, SolveTrace]:
    """Integrate dz/dt = field_fn(z, t) from t0 to t1 (t1 >= t0).

    Returns the final state and the accepted-step trace. The zero-length
    case returns z0 itself, bit-exact.
    """
    cfg = cfg or IntegrationConfig()
    if not np.all(np.isfinite(z0.data)):
        raise ValueError("z0 must be finite")
    if t1 < t0:
        raise ValueError(f"backward integration not supported: {t1} < {t0}")
    trace = SolveTrace(t_start=t0, t_end=t1)
    if t1 == t0:
        return z0, trace

    y = z0
    t = t0
    k1 = field_fn(y, t)
    trace.n_feval += 1
    _check_finite(k1, t)
    h = _initial_step(field_fn, y, k1, t0, t1 - t0, cfg)
    trace.n_feval += 1
    err_prev = 1.0
    attempts = 0

    while t < t1:
        if attempts >= cfg.max_steps:
            raise RuntimeError(
                f"stiffness/step budget: exceeded {cfg.max_steps} steps at t={t}")
        attempts += 1
        last = h >= (t1 - t)
        if last:
            h = t1 - t

        ks = [k1]
        for i in range(1, 6):
            yi = y
            for j, a in enumerate(_A[i]):
                if a != 0.0:
                    yi = ag.add(yi, ag.mul_const(ks[j], h * a))
            ki = field_fn(yi, t + _C[i] * h)
            trace.n_feval += 1
            _check_finite(ki, t + _C[i] * h)
            ks.append(ki)
        y5 = y
        for j, b in enumerate(_B5):
            if b != 0.0:
                y5 = ag.add(y5, ag.mul_const(ks[j], h * b))
        k7 = field_fn(y5, t + h)
        trace.n_feval += 1
        _check_finite(k7, t + h)
        ks.append(k7)

        err_vec = np.zeros(y.shape, dtype=np.float64)
        for j, e in enumerate(_E):
            if e != 0.0:
                err_vec += e * ks[j].data.astype(np.float64)
        err_vec *= h
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y.data), np.abs(y5.data))
        err = _rms(err_vec / scale.astype(np.float64))
        trace.history.append((t, h, err))

        if err <= 1.0:
            trace.steps.append(_Step(t0=t, t1=t + h, y0=y, y1=y5, f0=k1, f1=k7))
            trace.n_accepted += 1
            y = y5
            t = t1 if last else t + h
            k1 = k7  # FSAL
            if err == 0.0:
                factor = cfg.max_factor
            else:
                factor = cfg.safety * err ** (-_PI_ALPHA) * err_prev ** _PI_BETA
            err_prev = max(err, 1e-10)
        else:
            trace.n_rejected += 1
            factor = min(cfg.safety * err ** (-1.0 / _ORDER), 1.0)
        h *= min(max(factor, cfg.min_factor), cfg.max_factor)

    return y, trace


def dopri5_integrate_adjoint_check(field_fn, z0: Tensor, t1: float,
                                   params=(), cfg: IntegrationConfig | None = None,
                                   fd_eps: float = 1e-6, max_coords: int = 8,
                                   rng: np.random.Generator | None = None) -> float:
    """Gradient check through the recorded solver steps.

    Compares reverse-mode gradients of a fixed random linear functional of
    z(t1) against central finite differences, over z0 and any field
    parameters supplied. Small state dimensions only.
    """
    from .optim import grad_check

    if z0.data.size > 16:
        raise ValueError("adjoint check is for small states (dimension <= 16)")
    rng = rng or np.random.default_rng(0)
    w = Tensor(rng.normal(size=z0.shape).astype(z0.dtype))
    tensors = [z0, *params]

    def loss_fn():
        y, _ = dopri5_integrate(field_fn, z0, 0.0, t1, cfg)
        return ag.mean_all(ag.mul(y, w))

    return grad_check(loss_fn, tensors, fd_eps=fd_eps, max_coords=max_coords, rng=rng)
