"""Synthetic corpora: drifting labeled articles and dynamics trajectories.

The drift generator realizes environment drift as a ring of word slots.
Slot g sits at angle theta_g and owns two interchangeable word pools, a
and b. Each topic carries a ring position c_k(tau) that advances by
drift_amplitude * rotation_scale per period; fake articles draw their
slot tokens near c_k(tau) and real articles near the far side
c_k(tau) + pi * style_strength, plus a few cross-side noise draws. The
label therefore lives in WHERE on the ring an article's tokens sit, and
that location rotates: over enough periods every slot hosts both labels,
so slot identity alone carries no fixed label signal and a reader must
know where fake currently points. That bearing is exactly the
environmental state a per-period prompt can carry and a fixed classifier
cannot. The bearing moves smoothly, so the sequence of per-period optima
has a low-dimensional, forecastable path: the weights of the slots under
the bump shift a little each period. The association cos(c_k(tau)) flips
topic veracity whenever the fake bearing crosses a quadrant boundary.
Amplitude 0 pins every ring position, making the period-conditional
distributions identical by construction. Topics beyond the
label_flip_topics fraction never move and sit at angle 0.

The dynamics generator samples closed-form trajectory families (no ODE
solver involved) and lifts the scalar solution into prompt-shaped states
via state(t) = offset + c(t) * direction.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from datetime import date

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import NewsArticle, TemporalDataset

FAMILIES = ("damped_oscillator", "logistic", "linear_decay")


@dataclass
class DriftConfig:
    n_periods: int = 8
    per_period_count: int = 500
    vocab_size: int = 2000
    drift_amplitude: float = 0.8
    label_flip_topics: float = 1.0  # fraction of topics whose ring position moves
    seed: int = 0
    n_topics: int = 16
    topic_words_each: int = 6
    n_slots: int = 8
    style_words_per_set: int = 12   # pool size per slot and polarity
    topic_draws: int = 2
    style_draws: int = 10
    distractor_draws: int = 2
    filler_draws: int = 4
    style_strength: float = 1.0  # real-class offset, as a fraction of pi
    # 5pi/8 per period at amplitude 1; at 0.8 the bearing advances a quarter
    # turn per period, so every slot hosts both labels across an 8-period run
    rotation_scale: float = 5.0 * math.pi / 8.0
    slot_concentration: float = 5.0      # how tightly draws hug the ring position
    phase_spread: float = 0.0            # 0 = all drifting topics share one phase
    start_year: int = 2010


def association(cfg: DriftConfig, phases: np.ndarray, topic: int, tau: int) -> float:
    """Label association of a topic in period tau (1-based): the cosine of
    its ring position. Topics beyond the drifting fraction sit at angle 0
    and hold a = 1 forever. Slot draws realize this value only up to the
    bump-width attenuation, so treat it as the drift signal, not an exact
    per-article probability."""
    n_drift = round(cfg.label_flip_topics * cfg.n_topics)
    if topic >= n_drift:
        return 1.0
    omega = cfg.drift_amplitude * cfg.rotation_scale
    return math.cos(phases[topic] + omega * (tau - 1))


def _ring_position(cfg: DriftConfig, phases: np.ndarray, topic: int, tau: int) -> float:
    n_drift = round(cfg.label_flip_topics * cfg.n_topics)
    if topic >= n_drift:
        return 0.0
    return phases[topic] + cfg.drift_amplitude * cfg.rotation_scale * (tau - 1)


def gen_synthetic_drift(cfg: DriftConfig) -> TemporalDataset:
    if cfg.n_periods < 2:
        raise ValueError("need at least 2 periods")
    if not 0.0 <= cfg.drift_amplitude <= 1.0:
        raise ValueError("drift_amplitude must lie in [0, 1]")
    if not 0.0 <= cfg.label_flip_topics <= 1.0:
        raise ValueError("label_flip_topics must lie in [0, 1]")
    reserved = (cfg.n_topics * cfg.topic_words_each
                + 2 * cfg.n_slots * cfg.style_words_per_set)
    n_filler = cfg.vocab_size - reserved
    if n_filler < 10:
        raise ValueError("vocab_size too small for topic and slot sets")

    slot_a = [[f"g{g}a{j}" for j in range(cfg.style_words_per_set)]
              for g in range(cfg.n_slots)]
    slot_b = [[f"g{g}b{j}" for j in range(cfg.style_words_per_set)]
              for g in range(cfg.n_slots)]
    theta = 2.0 * math.pi * np.arange(cfg.n_slots) / cfg.n_slots
    topic_words = [[f"t{k}w{j}" for j in range(cfg.topic_words_each)]
                   for k in range(cfg.n_topics)]
    filler = [f"f{j}" for j in range(n_filler)]

    rng = np.random.default_rng(cfg.seed)
    base = rng.uniform(0.0, 2.0 * math.pi)
    phases = base + cfg.phase_spread * rng.uniform(0.0, 2.0 * math.pi,
                                                   size=cfg.n_topics)

    articles = []
    for tau in range(1, cfg.n_periods + 1):
        year = cfg.start_year + tau - 1
        n = cfg.per_period_count
        labels = np.array([0] * (n // 2) + [1] * (n - n // 2))
        rng.shuffle(labels)
        for i in range(n):
            y = int(labels[i])
            k = int(rng.integers(cfg.n_topics))
            c = _ring_position(cfg, phases, k, tau)
            own = c if y == 1 else c + math.pi * cfg.style_strength
            words = [topic_words[k][int(j)]
                     for j in rng.integers(cfg.topic_words_each, size=cfg.topic_draws)]
            draws = ((own, cfg.style_draws),
                     (own + math.pi, cfg.distractor_draws))
            for center, count in draws:
                w = np.exp(cfg.slot_concentration * np.cos(theta - center))
                w = w / w.sum()
                slots = rng.choice(cfg.n_slots, size=count, p=w)
                for g, flip in zip(slots, rng.random(count)):
                    pool = slot_a[g] if flip < 0.5 else slot_b[g]
                    words.append(pool[int(rng.integers(len(pool)))])
            words += [filler[int(j)]
                      for j in rng.integers(n_filler, size=cfg.filler_draws)]
            rng.shuffle(words)
            ts = date(year, int(rng.integers(1, 13)), int(rng.integers(1, 29)))
            articles.append(NewsArticle(id=f"s{tau:02d}n{i:05d}", text=" ".join(words),
                                        label=y, timestamp=ts))
    articles.sort(key=lambda art: art.timestamp)
    return TemporalDataset(articles=articles)


# ---------------------------------------------------------------------------
# dynamics trajectories


@dataclass
class DynamicsConfig:
    families: tuple = FAMILIES
    n_traj: int = 64
    grid_len: int = 16
    split_frac: float = 0.75
    seed: int = 0
    k: int = 32
    d: int = 64
    t_max: float = 1.0
    lift: str = "random"       # "random" or "identity" (state = c(t) everywhere)
    amplitude_range: tuple = (0.5, 1.5)
    offset_range: tuple = (-0.5, 0.5)
    z0_range: tuple = (0.5, 1.5)
    decay_rate_range: tuple = (0.5, 2.0)
    logistic_rate_range: tuple = (1.0, 4.0)
    omega_range: tuple = (math.pi / 2, 2.0 * math.pi)
    damping_range: tuple = (0.0, 1.0)
    phase_range: tuple = (0.0, 2.0 * math.pi)


@dataclass
class Trajectory:
    times: np.ndarray           # (G,), strictly increasing
    states: np.ndarray          # (G, k, d)


@dataclass
class TrajectoryCorpus:
    trajectories: list[Trajectory]
    split_index: int            # states[:split] are inputs, states[split:] outputs
    manifest: dict = field(default_factory=dict)


def _closed_form(family: str, cfg: DynamicsConfig, rng) -> "np.ufunc":
    u = rng.uniform
    if family == "linear_decay":
        z0, rate = u(*cfg.z0_range), u(*cfg.decay_rate_range)
        return lambda t: z0 * np.exp(-rate * t)
    if family == "logistic":
        z0, r = u(0.1, 0.9), u(*cfg.logistic_rate_range)
        return lambda t: 1.0 / (1.0 + (1.0 - z0) / z0 * np.exp(-r * t))
    if family == "damped_oscillator":
        gamma, omega, phi = u(*cfg.damping_range), u(*cfg.omega_range), u(*cfg.phase_range)
        return lambda t: np.exp(-gamma * t) * np.cos(omega * t + phi)
    raise ValueError(f"unknown trajectory family {family!r}")


def gen_dynamics_corpus(cfg: DynamicsConfig) -> TrajectoryCorpus:
    """Closed-form trajectories only; the numerical solver under test never
    touches the pre-training data."""
    if cfg.n_traj <= 0:
        raise ValueError("empty corpus: n_traj must be positive")
    if cfg.grid_len < 4:
        raise ValueError("grid_len must be at least 4")
    if not 0.0 < cfg.split_frac < 1.0:
        raise ValueError("split_frac must lie strictly between 0 and 1")
    for fam in cfg.families:
        if fam not in FAMILIES:
            raise ValueError(f"unknown trajectory family {fam!r}")

    rng = np.random.default_rng(cfg.seed)
    times = np.linspace(0.0, cfg.t_max, cfg.grid_len)
    split = min(max(int(round(cfg.grid_len * cfg.split_frac)), 1), cfg.grid_len - 1)

    trajectories = []
    for i in range(cfg.n_traj):
        family = cfg.families[int(rng.integers(len(cfg.families)))]
        c = _closed_form(family, cfg, rng)
        vals = c(times)
        if cfg.lift == "identity":
            states = np.broadcast_to(vals[:, None, None], (cfg.grid_len, cfg.k, cfg.d)).copy()
        else:
            offset = rng.uniform(*cfg.offset_range, size=(cfg.k, cfg.d))
            direction = rng.normal(0.0, 1.0, size=(cfg.k, cfg.d)) * rng.uniform(*cfg.amplitude_range)
            states = offset[None] + vals[:, None, None] * direction[None]
        if not np.all(np.isfinite(states)):
            raise ValueError("non-finite state in generated trajectory")
        trajectories.append(Trajectory(times=times.copy(), states=states))

    manifest = {"config": _config_manifest(cfg), "seed": cfg.seed}
    return TrajectoryCorpus(trajectories=trajectories, split_index=split,
                            manifest=manifest)


def _config_manifest(cfg) -> dict:
    out = {}
    for key, val in asdict(cfg).items():
        out[key] = list(val) if isinstance(val, tuple) else val
    return out


def save_corpus(path: str, corpus: TrajectoryCorpus) -> None:
    arrays = {"split_index": np.array([corpus.split_index], dtype=np.float32)}
    for i, tr in enumerate(corpus.trajectories):
        arrays[f"traj.{i}.times"] = tr.times
        arrays[f"traj.{i}.states"] = tr.states
    save_checkpoint(path, arrays)
    with open(path + ".json", "w", encoding="utf-8") as f:
        json.dump(corpus.manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def load_corpus(path: str) -> TrajectoryCorpus:
    arrays = load_checkpoint(path)
    split = int(arrays.pop("split_index")[0])
    n = len({key.split(".")[1] for key in arrays})
    trajectories = []
    for i in range(n):
        trajectories.append(Trajectory(times=arrays[f"traj.{i}.times"].astype(np.float64),
                                       states=arrays[f"traj.{i}.states"].astype(np.float64)))
    try:
        with open(path + ".json", "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        manifest = {}
    return TrajectoryCorpus(trajectories=trajectories, split_index=split,
                            manifest=manifest)
