"""Two-stage training orchestration.

Stage one trains the detector and a global environment prompt jointly on
the whole training split. Stage two freezes the detector, learns one
prompt per period, and alternates those prompt updates with fit steps of
the chosen sequence model, which afterwards extrapolates a prompt for the
first unseen period.
"""
from __future__ import annotations

import logging
import math
import os
import time
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import autodiff as ag
from .autodiff import Tensor
from .checkpoint import save_checkpoint, save_params
from .data import (NewsArticle, TemporalDataset, Vocabulary, abs_period_index,
                   encode_batch, holdout_final_year, split_temporal)
from .der import DerEntry, DerSeries, der_step_budget, init_der, train_period_der
from .detector import Detector, new_der, warmup_loss
from .lstm import LstmModel
from .metrics import confusion_metrics
from .ode import OdeModel
from .optim import Adam
from .pretrained import PtModel

log = logging.getLogger(__name__)

VARIANTS = ("static", "lstm", "ode", "pt")


@dataclass
class RunConfig:
    # schedule
    interval: str = "yearly"
    variant: str = "static"
    e_w: int = 20                   # warm-up epochs
    e_d: int = 10                   # stage-two epochs' worth of iterations
    batch_size: int = 64
    lr_detector: float = 7e-5
    lr_der: float = 1e-5
    lr_tsm: float = 1e-3
    patience: int = 5
    seed: int = 0
    stage2_mode: str = "interleaved"    # or "sequential"
    period_order: str = "round_robin"   # or "random"
    der_epochs: int = 3                 # sequential-mode budget per period
    der_step_floor: int = 50
    # detector and prompt sizes
    k: int = 32
    d: int = 64
    n_heads: int = 4
    n_layers: int = 2
    pooling: str = "mean"
    max_len: int = 64
    min_freq: int = 2
    # sequence-model sizes
    lstm_hidden: int = 128
    ode_hidden: int = 256
    pt_model_dim: int = 128
    pt_heads: int = 4
    pt_layers: int = 2
    pt_max_pos: int = 64

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.interval not in ("yearly", "seasonal"):
            raise ValueError(f"unknown interval {self.interval!r}")
        if self.stage2_mode not in ("interleaved", "sequential"):
            raise ValueError(f"unknown stage2_mode {self.stage2_mode!r}")
        if self.period_order not in ("round_robin", "random"):
            raise ValueError(f"unknown period_order {self.period_order!r}")
        for name in ("batch_size", "patience", "k", "d", "n_heads", "n_layers",
                     "max_len", "lstm_hidden", "ode_hidden", "pt_model_dim",
                     "pt_heads", "pt_layers", "pt_max_pos", "der_epochs",
                     "der_step_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("e_w", "e_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("lr_detector", "lr_der", "lr_tsm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class RunArtifacts:
    config: RunConfig
    detector: Detector
    z0: Tensor
    vocab: Vocabulary
    series: DerSeries
    tsm: object | None
    z_future: np.ndarray | None     # None for the static variant
    future_abs: int
    splits: tuple[list[NewsArticle], list[NewsArticle], list[NewsArticle]]
    timings: dict[str, float]
    history: dict
    paths: dict[str, str] = field(default_factory=dict)


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators per pipeline stage. Spawning keeps every
    stage's stream stable when another stage changes how much randomness
    it consumes."""
    root = np.random.SeedSequence(seed)
    names = ("model", "warmup", "tsm", "stage2")
    return {n: np.random.default_rng(c) for n, c in zip(names, root.spawn(len(names)))}


def make_tsm(cfg: RunConfig, rng: np.random.Generator):
    if cfg.variant == "static":
        return None
    if cfg.variant == "lstm":
        return LstmModel(cfg.k, cfg.d, hidden=cfg.lstm_hidden, lr=cfg.lr_tsm, rng=rng)
    if cfg.variant == "ode":
        return OdeModel(cfg.k, cfg.d, hidden=cfg.ode_hidden, lr=cfg.lr_tsm, rng=rng)
    return PtModel(cfg.k, cfg.d, model_dim=cfg.pt_model_dim, n_heads=cfg.pt_heads,
                   n_layers=cfg.pt_layers, max_pos=cfg.pt_max_pos,
                   lr=cfg.lr_tsm, rng=rng)


def score_articles(detector: Detector, z, ids: np.ndarray,
                   batch_size: int = 256) -> np.ndarray:
    """Probabilities for a block of encoded articles under one prompt."""
    if not isinstance(z, Tensor):
        z = ag.constant(np.asarray(z, dtype=float))
    out = []
    with ag.no_grad():
        for i in range(0, len(ids), batch_size):
            out.append(detector.predict_with_der(z, ids[i:i + batch_size]).data)
    return np.concatenate(out) if out else np.zeros(0)


def _labels(articles: list[NewsArticle]) -> np.ndarray:
    return np.array([a.label for a in articles], dtype=np.float64)


def batches_per_epoch(n: int, batch_size: int) -> int:
    return max(1, math.ceil(n / batch_size))


def warmup(train: list[NewsArticle], val: list[NewsArticle],
           detector: Detector, z0: Tensor, vocab: Vocabulary,
           cfg: RunConfig, rng: np.random.Generator) -> dict:
    """Stage one: joint mini-batch training of the detector and the global
    prompt, with early stopping on validation macro F1.

    Mutates `detector` and `z0` in place and returns the training history.
    The best-scoring snapshot (including the untrained initialization) is
    restored before returning, so validation F1 never ends below where it
    started. Without a validation split early stopping is disabled.
    """
    if not train:
        raise ValueError("training split is empty")
    ids = encode_batch(train, vocab)
    labels = _labels(train)
    has_val = len(val) > 0
    if not has_val:
        log.warning("no validation split; early stopping disabled")
    else:
        val_ids = encode_batch(val, vocab)
        val_labels = _labels(val)

    opt_det = Adam(detector.params(), lr=cfg.lr_detector)
    opt_z = Adam([z0], lr=cfg.lr_der)
    tracked = detector.params() + [z0]

    history: dict = {"train_loss": [], "val_macro_f1": [], "best_epoch": 0,
                     "stopped_early": False}
    best_f1 = -1.0
    best_state: dict[str, np.ndarray] = {}

    def snapshot():
        return {t.name: t.data.copy() for t in tracked}

    def val_f1() -> float:
        scores = score_articles(detector, z0, val_ids)
        return confusion_metrics(scores, val_labels)[3]

    if has_val:
        best_f1 = val_f1()
        best_state = snapshot()
        history["val_macro_f1"].append(best_f1)

    bad_epochs = 0
    n = len(train)
    for epoch in range(cfg.e_w):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, cfg.batch_size):
            batch = perm[lo:lo + cfg.batch_size]
            with ag.Tape() as tape:
                loss = warmup_loss(detector, z0, ids[batch], labels[batch])
                tape.backward(loss)
            opt_det.step()
            opt_z.step()
            opt_det.zero_grad()
            opt_z.zero_grad()
            epoch_loss += float(loss.data)
            n_batches += 1
        history["train_loss"].append(epoch_loss / n_batches)
        if not has_val:
            continue
        f1 = val_f1()
        history["val_macro_f1"].append(f1)
        if f1 > best_f1:
            best_f1, best_state = f1, snapshot()
            history["best_epoch"] = epoch + 1
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                history["stopped_early"] = True
                break
    if best_state:
        for t in tracked:
            t.data = best_state[t.name]
    return history


def _period_blocks(dataset: TemporalDataset, vocab: Vocabulary):
    ids_by_tau, labels_by_tau = {}, {}
    for p in dataset.periods:
        arts = dataset.period_articles(p.index)
        if arts:
            ids_by_tau[p.index] = encode_batch(arts, vocab)
            labels_by_tau[p.index] = _labels(arts)
        else:
            ids_by_tau[p.index] = np.zeros((0, vocab.max_len), dtype=np.int64)
            labels_by_tau[p.index] = np.zeros(0)
    return ids_by_tau, labels_by_tau


def _init_series(dataset: TemporalDataset, detector: Detector, z0: Tensor,
                 vocab: Vocabulary, rng: np.random.Generator) -> DerSeries:
    if not dataset.periods:
        raise ValueError("dataset has no periods; split it by interval first")
    entries = []
    for p in dataset.periods:
        z = init_der(dataset.period_articles(p.index), detector, vocab,
                     p.index, rng, z0)
        entries.append(DerEntry(tau=p.index, abs_index=p.abs_index,
                                start=p.start, end=p.end, z=z, loss_trace=[]))
    return DerSeries(z0=z0, z0_abs_index=dataset.periods[0].abs_index - 1,
                     entries=entries)


def dynamic_env_learning(dataset: TemporalDataset, detector: Detector,
                         z0: Tensor, tsm, vocab: Vocabulary, cfg: RunConfig,
                         rng: np.random.Generator) -> tuple[DerSeries, dict]:
    """Stage two: per-period prompt learning alternated with sequence-model
    fitting against the frozen detector.

    Interleaved mode takes one prompt step and one model step per
    iteration, visiting non-empty periods round-robin so each receives the
    same number of steps give or take one. Sequential mode trains every
    prompt to its step budget first and only then fits the model.
    """
    if not detector.is_frozen():
        raise ValueError("detector must be frozen for dynamic environment learning")
    series = _init_series(dataset, detector, z0, vocab, rng)
    ids_by_tau, labels_by_tau = _period_blocks(dataset, vocab)
    entries = {e.tau: e for e in series.entries}
    live = [tau for tau in sorted(ids_by_tau) if len(ids_by_tau[tau]) > 0]
    for tau in sorted(set(ids_by_tau) - set(live)):
        log.warning("period %d is empty; no prompt training for it", tau)
    if not live:
        raise ValueError("every period is empty; nothing to learn from")

    n_train = sum(len(v) for v in ids_by_tau.values())
    total_iters = cfg.e_d * batches_per_epoch(n_train, cfg.batch_size)
    opts = {tau: Adam([entries[tau].z], lr=cfg.lr_der) for tau in live}
    history: dict = {"tsm_loss": [], "der_steps": {tau: 0 for tau in live},
                     "iterations": total_iters}

    def der_step(tau: int):
        trace = train_period_der(entries[tau].z, detector, ids_by_tau[tau],
                                 labels_by_tau[tau], steps=1, lr=cfg.lr_der,
                                 batch_size=cfg.batch_size, rng=rng,
                                 opt=opts[tau])
        entries[tau].loss_trace.extend(trace)
        history["der_steps"][tau] += 1

    if cfg.stage2_mode == "sequential":
        for tau in live:
            budget = der_step_budget(len(ids_by_tau[tau]), cfg.batch_size,
                                     epochs=cfg.der_epochs,
                                     floor=cfg.der_step_floor)
            for _ in range(budget):
                der_step(tau)
        if tsm is not None:
            for _ in range(total_iters):
                history["tsm_loss"].append(tsm.fit_step(series))
        return series, history

    for i in range(total_iters):
        if cfg.period_order == "round_robin":
            tau = live[i % len(live)]
        else:
            tau = live[rng.integers(len(live))]
        der_step(tau)
        if tsm is not None:
            history["tsm_loss"].append(tsm.fit_step(series))
    return series, history


def predict_future(tsm, series: DerSeries, future_abs: int | None = None) -> np.ndarray:
    """Prompt forecast for an unseen period.

    `future_abs` is the period's calendar position; default is the slot
    right after the last trained period. The static fallback reuses the
    last trained prompt; the recurrent model always predicts one step
    ahead whatever the gap; the continuous models evaluate at the true
    normalized time or position.
    """
    if series.n_periods < 1:
        raise ValueError("series has no trained periods")
    last_abs = series.entries[-1].abs_index
    if future_abs is None:
        future_abs = last_abs + 1
    if future_abs <= last_abs:
        raise ValueError(f"future period {future_abs} is not after the last "
                         f"trained period {last_abs}")
    if tsm is None:
        return series.entries[-1].z.data.copy()
    if isinstance(tsm, LstmModel):
        return tsm.forecast(series.trajectory())
    if isinstance(tsm, OdeModel):
        return tsm.forecast(series.z0.data, series.time_of(future_abs))
    if isinstance(tsm, PtModel):
        return tsm.forecast(series, future_abs - series.z0_abs_index)
    raise TypeError(f"unknown sequence model {type(tsm).__name__}")


def run_pipeline(dataset: TemporalDataset | None, cfg: RunConfig,
                 out_dir: str | None = None, tsm=None,
                 splits=None) -> RunArtifacts:
    """Full run: split, warm up, freeze, learn the prompt series, fit the
    sequence model, forecast the test period's prompt.

    Pass a pre-built `tsm` (e.g. one warm from dynamics pre-training) to
    skip its construction. `splits` overrides the default final-year
    holdout, which the drop-rate experiment uses to truncate training
    while keeping the test split fixed. With `out_dir` set, checkpoints
    are written there and their paths recorded in the artifacts.
    """
    streams = seed_streams(cfg.seed)
    timings: dict[str, float] = {}

    if splits is None:
        if dataset is None:
            raise ValueError("need a dataset or explicit splits")
        splits = holdout_final_year(dataset)
    train, val, test = splits
    vocab = Vocabulary.build([a.text for a in train], cfg.max_len,
                             min_freq=cfg.min_freq)
    detector = Detector(vocab.size, d=cfg.d, n_heads=cfg.n_heads,
                        n_layers=cfg.n_layers, pooling=cfg.pooling,
                        rng=streams["model"])
    z0 = new_der(streams["model"], cfg.k, cfg.d, tau=0)

    t0 = time.perf_counter()
    warm_history = warmup(train, val, detector, z0, vocab, cfg, streams["warmup"])
    timings["warmup"] = time.perf_counter() - t0

    detector.freeze()
    train_ds = split_temporal(TemporalDataset(articles=train), cfg.interval)
    if tsm is None:
        tsm = make_tsm(cfg, streams["tsm"])

    t0 = time.perf_counter()
    series, stage2_history = dynamic_env_learning(train_ds, detector, z0, tsm,
                                                  vocab, cfg, streams["stage2"])
    timings["stage2"] = time.perf_counter() - t0

    future_abs = min(abs_period_index(a.timestamp, cfg.interval) for a in test) \
        if test else series.entries[-1].abs_index + 1
    t0 = time.perf_counter()
    z_future = None if cfg.variant == "static" \
        else predict_future(tsm, series, future_abs)
    timings["predict"] = time.perf_counter() - t0
    timings["total"] = sum(timings.values())

    paths: dict[str, str] = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["detector"] = os.path.join(out_dir, "detector.ckpt")
        save_params(paths["detector"], detector.params() + [z0])
        paths["ders"] = os.path.join(out_dir, "ders.ckpt")
        series.save(paths["ders"])
        if tsm is not None:
            paths["tsm"] = os.path.join(out_dir, "tsm.ckpt")
            save_params(paths["tsm"], tsm.params())
        if z_future is not None:
            paths["future"] = os.path.join(out_dir, "future.ckpt")
            save_checkpoint(paths["future"], {"der.future": z_future})

    return RunArtifacts(config=cfg, detector=detector, z0=z0, vocab=vocab,
                        series=series, tsm=tsm, z_future=z_future,
                        future_abs=future_abs, splits=(train, val, test),
                        timings=timings,
                        history={"warmup": warm_history, "stage2": stage2_history},
                        paths=paths)


def timing_ledger(runs: dict[str, RunArtifacts]) -> dict:
    """Wall-clock totals per run with ratios against the static baseline,
    which is 1.0 by definition."""
    if "static" not in runs:
        raise ValueError("timing ledger needs a 'static' baseline run")
    base = runs["static"].timings["total"]
    if base <= 0.0:
        base = 1e-9
    out = {}
    for name, art in runs.items():
        out[name] = {"seconds": dict(art.timings),
                     "ratio": art.timings["total"] / base}
    out["static"]["ratio"] = 1.0
    return out
