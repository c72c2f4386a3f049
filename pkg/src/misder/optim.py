"""Adam optimizer and finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tape, Tensor


class AdamState:
    """First/second moment buffers and step counter for one tensor."""

    __slots__ = ("m", "v", "t")

    def __init__(self, shape, dtype):
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)
        self.t = 0


def adam_step(p: Tensor, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> bool:
    """One bias-corrected Adam update in place.

    Frozen tensors are never touched (returns False so callers can count the
    skips). A tensor with no accumulated gradient is also left alone.
    """
    if p.frozen:
        return False
    if p.grad is None:
        return False
    state.t += 1
    g = p.grad
    state.m += (1.0 - beta1) * (g - state.m)
    state.v += (1.0 - beta2) * (g * g - state.v)
    mhat = state.m / (1.0 - beta1 ** state.t)
    vhat = state.v / (1.0 - beta2 ** state.t)
    p.data -= lr * mhat / (np.sqrt(vhat) + eps)
    return True


class Adam:
    """Adam over a fixed list of tensors with one shared learning rate."""

    def __init__(self, params: Sequence[Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.states = [AdamState(p.shape, p.dtype) for p in self.params]
        self.frozen_skips = 0

    def step(self) -> None:
        for p, s in zip(self.params, self.states):
            if p.frozen:
                self.frozen_skips += 1
                continue
            adam_step(p, s, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Tensor],
               fd_eps: float = 1e-5, max_coords: int = 16,
               rng: np.random.Generator | None = None) -> float:
    """Compare tape gradients against central finite differences.

    ``loss_fn`` must rebuild the forward pass from the params' current data.
    For each tensor up to ``max_coords`` coordinates are probed. Returns the
    worst relative error max(|fd-ad|) / max(|fd|,|ad|,1e-8). Only meaningful
    in float64.
    """
    rng = rng or np.random.default_rng(0)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    ad = []
    for p in params:
        if p.grad is None:
            raise ValueError(f"no gradient reached {p.name or 'param'}")
        ad.append(p.grad.copy())

    worst = 0.0
    for p, g in zip(params, ad):
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        for c in coords:
            x0 = flat[c]
            flat[c] = x0 + fd_eps
            up = loss_fn().item()
            flat[c] = x0 - fd_eps
            down = loss_fn().item()
            flat[c] = x0
            fd = (up - down) / (2.0 * fd_eps)
            a = g.reshape(-1)[c]
            err = abs(fd - a) / max(abs(fd), abs(a), 1e-8)
            worst = max(worst, err)
    return worst
