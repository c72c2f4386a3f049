"""Per-period environmental prompt learning.

After warm-up the detector is frozen and each time period gets its own
K x D prompt, initialised from the period's event text and refined with
Adam against the period's subset only. The resulting ordered sequence is
the training target for the temporal model.
"""
from __future__ import annotations

import datetime
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import PAD, NewsArticle, Vocabulary
from .detector import Detector
from .events import extract_events
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass
class DerEntry:
    tau: int
    abs_index: int
    start: datetime.date
    end: datetime.date
    z: Tensor
    loss_trace: list[float] = field(default_factory=list)


@dataclass
class DerSeries:
    """z^0 followed by one entry per non-empty period, tau contiguous 1..T."""
    z0: Tensor
    z0_abs_index: int
    entries: list[DerEntry] = field(default_factory=list)

    def __post_init__(self):
        for want, e in enumerate(self.entries, start=1):
            if e.tau != want:
                raise ValueError(f"period indices not contiguous: {e.tau} != {want}")

    @property
    def n_periods(self) -> int:
        return len(self.entries)

    def trajectory(self) -> list[Tensor]:
        return [self.z0] + [e.z for e in self.entries]

    def times(self) -> np.ndarray:
        """Calendar positions mapped onto [0, 1]: z^0 at 0, last entry at 1.
        Gaps from dropped empty periods stay visible as uneven spacing."""
        abs_idx = np.array([self.z0_abs_index] + [e.abs_index for e in self.entries],
                           dtype=np.float64)
        span = abs_idx[-1] - abs_idx[0]
        if span <= 0:
            raise ValueError("time axis needs at least one period after z0")
        return (abs_idx - abs_idx[0]) / span

    def time_of(self, abs_index: int) -> float:
        span = self.entries[-1].abs_index - self.z0_abs_index
        return (abs_index - self.z0_abs_index) / span

    def save(self, path: str) -> None:
        groups = {self.z0.name: self.z0.data}
        index = {"z0_abs_index": self.z0_abs_index, "entries": []}
        for e in self.entries:
            groups[e.z.name] = e.z.data
            index["entries"].append({
                "tau": e.tau, "abs_index": e.abs_index,
                "start": e.start.isoformat(), "end": e.end.isoformat(),
                "loss_trace": e.loss_trace,
            })
        save_checkpoint(path, groups)
        with open(path + ".json", "w", encoding="utf-8") as f:
            json.dump(index, f, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path: str) -> "DerSeries":
        groups = load_checkpoint(path)
        with open(path + ".json", encoding="utf-8") as f:
            index = json.load(f)
        z0 = ag.param(groups["der.0"], name="der.0")
        entries = []
        for rec in index["entries"]:
            z = ag.param(groups[f"der.{rec['tau']}"], name=f"der.{rec['tau']}")
            entries.append(DerEntry(
                tau=rec["tau"], abs_index=rec["abs_index"],
                start=datetime.date.fromisoformat(rec["start"]),
                end=datetime.date.fromisoformat(rec["end"]),
                z=z, loss_trace=list(rec["loss_trace"])))
        return cls(z0=z0, z0_abs_index=index["z0_abs_index"], entries=entries)


def init_der(articles: list[NewsArticle], detector: Detector, vocab: Vocabulary,
             tau: int, rng: np.random.Generator, z0: Tensor,
             extractor: str = "offline_mean",
             sidecar_path: str | None = None, noise: float = 0.01) -> Tensor:
    """Event-informed start for one period's prompt.

    Events are extracted, tokenized and embedded through the frozen table,
    mean-pooled per event, averaged across events, broadcast to K rows, and
    perturbed with small Gaussian noise so rows are not identical.
    """
    k, d = z0.shape
    if not articles:
        log.warning("period %d has no articles; starting DER from z0", tau)
        return ag.param(z0.data.copy(), name=f"der.{tau}")
    events = extract_events(articles, extractor=extractor, sidecar_path=sidecar_path)
    table = detector.embedding.data
    pooled = []
    for text in events:
        ids = np.asarray(vocab.encode(text), dtype=np.int64)
        rows = table[ids[ids != PAD]]
        pooled.append(rows.mean(axis=0))
    v = np.stack(pooled).mean(axis=0)
    z = np.broadcast_to(v, (k, d)) + rng.normal(0.0, noise, size=(k, d))
    return ag.param(z, name=f"der.{tau}")


def train_period_der(z: Tensor, detector: Detector, ids: np.ndarray,
                     labels: np.ndarray, steps: int, lr: float,
                     batch_size: int, rng: np.random.Generator,
                     opt: Adam | None = None) -> list[float]:
    """Refine one period's prompt in place; only z moves.

    Returns the per-step loss trace (loss before each update). steps == 0
    leaves z untouched and returns an empty trace. Pass `opt` to keep Adam
    moments alive across calls when the caller alternates single steps
    with other work.
    """
    if not detector.is_frozen():
        raise ValueError("detector must be frozen before period DER training")
    n = len(ids)
    if n == 0:
        log.warning("empty period subset; DER left at initialisation")
        return []
    if opt is None:
        opt = Adam([z], lr=lr)
    trace = []
    labels = labels.astype(np.float64)
    for _ in range(steps):
        take = min(batch_size, n)
        batch = rng.choice(n, size=take, replace=False)
        with ag.Tape() as tape:
            p = detector.predict_with_der(z, ids[batch])
            loss = ag.bce_loss(p, labels[batch])
            tape.backward(loss)
        trace.append(float(loss.data))
        opt.step()
        opt.zero_grad()
    return trace


def der_step_budget(n_articles: int, batch_size: int, epochs: int = 3,
                    floor: int = 50) -> int:
    """Optimisation steps for one period: roughly `epochs` passes over the
    subset, never fewer than `floor`."""
    per_epoch = max(1, -(-n_articles // batch_size))
    return max(floor, epochs * per_epoch)


def aggregate_der_loss(detector: Detector, series: DerSeries,
                       period_ids: list[np.ndarray],
                       period_labels: list[np.ndarray]) -> float:
    """Mean over periods of the period's mean BCE under its own prompt."""
    if len(period_ids) != series.n_periods:
        raise ValueError("one id block per period required")
    per_period = []
    with ag.no_grad():
        for e, ids, labels in zip(series.entries, period_ids, period_labels):
            p = detector.predict_with_der(e.z, ids)
            per_period.append(float(ag.bce_loss(p, labels.astype(np.float64)).data))
    return float(np.mean(per_period))
