"""Experiment harnesses over trained runs.

Future-period evaluation with a leakage guard, long-horizon runs that
discard the newest training data, sensitivity sweeps over the period
interval and the prompt length, and per-article probability traces.
"""
from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import NewsArticle, TemporalDataset, holdout_final_year, split_temporal
from .data import encode_batch
from .der import DerSeries
from .detector import Detector
from .lstm import LstmModel
from .metrics import METRIC_FIELDS, MetricReport, metric_report
from .ode import OdeModel
from .pretrained import PtModel
from .train import (RunArtifacts, RunConfig, VARIANTS, batches_per_epoch,
                    make_tsm, predict_future, run_pipeline, score_articles,
                    seed_streams)

log = logging.getLogger(__name__)

SWEEP_AXES = ("drop_rate", "interval", "K", "period")


@dataclass
class SweepPoint:
    value: object                   # position on the sweep axis
    variant: str
    mean: MetricReport              # metric means over seeds (seed field is -1)
    std: dict[str, float]
    n_seeds: int
    avg_delta: float | None = None  # drop-rate axis: mean decline vs rate 0


@dataclass
class SweepReport:
    axis: str
    points: list[SweepPoint] = field(default_factory=list)

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}")
        if len(self.points) < 2:
            raise ValueError("a sweep needs at least two points")

    def series_for(self, variant: str, metric: str = "macro_f1"):
        """(value, mean, std) triples for one variant, in point order."""
        if metric not in METRIC_FIELDS:
            raise ValueError(f"unknown metric {metric!r}")
        return [(p.value, getattr(p.mean, metric), p.std[metric])
                for p in self.points if p.variant == variant]

    def to_json(self) -> str:
        points = []
        for p in self.points:
            points.append({"value": p.value, "variant": p.variant,
                           "n_seeds": p.n_seeds, "avg_delta": p.avg_delta,
                           "mean": json.loads(p.mean.to_json()),
                           "std": p.std})
        return json.dumps({"axis": self.axis, "points": points},
                          sort_keys=True, separators=(",", ":"))

    def to_text(self) -> str:
        rows = [["value", "variant", "seeds"] + list(METRIC_FIELDS) + ["avg_delta"]]
        for p in self.points:
            cells = [str(p.value), p.variant, str(p.n_seeds)]
            for m in METRIC_FIELDS:
                cells.append(f"{getattr(p.mean, m):.4f}±{p.std[m]:.4f}")
            cells.append("" if p.avg_delta is None else f"{p.avg_delta:+.4f}")
            rows.append(cells)
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
                 for r in rows]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        # one row per point and metric; the variant joins the axis cell
        # only when the sweep compares several variants
        multi = len({p.variant for p in self.points}) > 1
        buf = io.StringIO()
        buf.write("axis,metric,mean,std\n")
        for p in self.points:
            cell = f"{p.value}|{p.variant}" if multi else str(p.value)
            for m in METRIC_FIELDS:
                buf.write(f"{cell},{m},{getattr(p.mean, m):.6f},{p.std[m]:.6f}\n")
        return buf.getvalue()

    def write(self, base_path: str) -> dict[str, str]:
        paths = {"json": base_path + ".json", "text": base_path + ".txt",
                 "csv": base_path + ".csv"}
        with open(paths["json"], "w", encoding="utf-8") as f:
            f.write(self.to_json())
        with open(paths["text"], "w", encoding="utf-8") as f:
            f.write(self.to_text())
        with open(paths["csv"], "w", encoding="utf-8") as f:
            f.write(self.to_csv())
        return paths


def aggregate_reports(reports: list[MetricReport]) -> tuple[MetricReport, dict]:
    """Per-metric mean and population std over seeds. The mean report's
    seed field is -1 since it belongs to no single run."""
    if not reports:
        raise ValueError("nothing to aggregate")
    means, stds = {}, {}
    for m in METRIC_FIELDS:
        vals = np.array([getattr(r, m) for r in reports], dtype=float)
        means[m] = float(vals.mean())
        stds[m] = float(vals.std())
    mean = MetricReport(n_test=reports[0].n_test, seed=-1, **means)
    return mean, stds


def _labels(articles: list[NewsArticle]) -> np.ndarray:
    return np.array([a.label for a in articles], dtype=np.float64)


def evaluate_future(art: RunArtifacts, test: list[NewsArticle] | None = None) -> MetricReport:
    """Score a run's forecast prompt on the future-period test split.

    Every test article must postdate the whole training split; anything
    at or before the training maximum is temporal leakage and an error.
    """
    train = art.splits[0]
    if test is None:
        test = art.splits[2]
    if not test:
        raise ValueError("empty test split")
    train_max = max(a.timestamp for a in train)
    leaked = [a.id for a in test if a.timestamp <= train_max]
    if leaked:
        raise ValueError(
            f"temporal leakage: {len(leaked)} test article(s) dated at or "
            f"before the training maximum {train_max.isoformat()} "
            f"(first: {leaked[0]})")
    z_hat = art.z_future
    if z_hat is None:
        z_hat = predict_future(None, art.series, art.future_abs)
    scores = score_articles(art.detector, z_hat, encode_batch(test, art.vocab))
    return metric_report(scores, _labels(test), seed=art.config.seed)


def run_variant_suite(dataset: TemporalDataset | None, cfg: RunConfig,
                      variants=VARIANTS, splits=None,
                      pretrained: dict | None = None) -> dict[str, RunArtifacts]:
    """One run per variant at a shared seed.

    In sequential stage-two mode all variants share one warm-up and one
    prompt series: prompt learning never reads the sequence model, so the
    series a static run produces is bit-identical to the one any variant
    would produce, and each model is then fitted on it exactly as a full
    sequential run would. Interleaved mode falls back to independent full
    runs. Shared stages are billed to every variant's timings since each
    needs them.
    """
    import time

    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    pretrained = pretrained or {}
    if cfg.stage2_mode != "sequential":
        return {v: run_pipeline(dataset, replace(cfg, variant=v), splits=splits,
                                tsm=pretrained.get(v))
                for v in variants}

    backbone = run_pipeline(dataset, replace(cfg, variant="static"), splits=splits)
    out = {}
    if "static" in variants:
        out["static"] = backbone
    train = backbone.splits[0]
    total_iters = cfg.e_d * batches_per_epoch(len(train), cfg.batch_size)
    for v in variants:
        if v == "static":
            continue
        cfg_v = replace(cfg, variant=v)
        tsm = pretrained.get(v) or make_tsm(cfg_v, seed_streams(cfg_v.seed)["tsm"])
        t0 = time.perf_counter()
        losses = [tsm.fit_step(backbone.series) for _ in range(total_iters)]
        fit_time = time.perf_counter() - t0
        t0 = time.perf_counter()
        z_future = predict_future(tsm, backbone.series, backbone.future_abs)
        predict_time = time.perf_counter() - t0
        timings = {"warmup": backbone.timings["warmup"],
                   "stage2": backbone.timings["stage2"] + fit_time,
                   "predict": predict_time}
        timings["total"] = sum(timings.values())
        history = {"warmup": backbone.history["warmup"],
                   "stage2": dict(backbone.history["stage2"], tsm_loss=losses)}
        out[v] = RunArtifacts(config=cfg_v, detector=backbone.detector,
                              z0=backbone.z0, vocab=backbone.vocab,
                              series=backbone.series, tsm=tsm,
                              z_future=z_future, future_abs=backbone.future_abs,
                              splits=backbone.splits, timings=timings,
                              history=history)
    return out


def drop_rate_experiment(dataset: TemporalDataset, cfg: RunConfig,
                         rates=(0.0, 0.1, 0.3, 0.5), variants=VARIANTS,
                         seeds=(0, 1, 2, 3, 4)) -> SweepReport:
    """Long-horizon runs: discard the newest fraction of the training
    split, rerun the pipeline, evaluate on the untouched test split.

    Rate 0 reproduces the baseline run exactly. A truncation that leaves
    fewer than two periods is skipped with a warning. Each point's
    avg_delta is its mean metric decline against the same variant at
    rate 0, when that point exists.
    """
    train, val, test = holdout_final_year(dataset)
    collected: dict[tuple, list[MetricReport]] = {}
    kept_rates = []
    for rate in rates:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"drop rate {rate} outside [0, 1)")
        n_drop = int(round(rate * len(train)))
        kept = train[:len(train) - n_drop]
        if not kept or split_temporal(TemporalDataset(articles=list(kept)),
                                      cfg.interval).n_periods < 2:
            log.warning("drop rate %.2f leaves fewer than two periods; skipped", rate)
            continue
        kept_rates.append(rate)
        for seed in seeds:
            runs = run_variant_suite(None, replace(cfg, seed=seed), variants,
                                     splits=(kept, val, test))
            for v, art in runs.items():
                collected.setdefault((rate, v), []).append(evaluate_future(art))

    points = []
    base: dict[str, MetricReport] = {}
    for v in variants:
        if (0.0, v) in collected:
            base[v], _ = aggregate_reports(collected[(0.0, v)])
    for rate in kept_rates:
        for v in variants:
            mean, std = aggregate_reports(collected[(rate, v)])
            delta = None
            if v in base:
                delta = float(np.mean([getattr(base[v], m) - getattr(mean, m)
                                       for m in METRIC_FIELDS]))
            points.append(SweepPoint(value=rate, variant=v, mean=mean, std=std,
                                     n_seeds=len(seeds), avg_delta=delta))
    return SweepReport(axis="drop_rate", points=points)


def interval_sweep(dataset: TemporalDataset, cfg: RunConfig,
                   intervals=("yearly", "seasonal"), seeds=(0,)) -> SweepReport:
    """Rerun the pipeline under each period interval. The final-year test
    split is interval-independent, so scores are comparable."""
    points = []
    for interval in intervals:
        reports = [evaluate_future(run_pipeline(
            dataset, replace(cfg, interval=interval, seed=s))) for s in seeds]
        mean, std = aggregate_reports(reports)
        points.append(SweepPoint(value=interval, variant=cfg.variant,
                                 mean=mean, std=std, n_seeds=len(seeds)))
    return SweepReport(axis="interval", points=points)


def k_sweep(dataset: TemporalDataset, cfg: RunConfig,
            ks=(8, 16, 32), seeds=(0,)) -> SweepReport:
    """Rerun the pipeline at each prompt length."""
    points = []
    for k in ks:
        reports = [evaluate_future(run_pipeline(
            dataset, replace(cfg, k=k, seed=s))) for s in seeds]
        mean, std = aggregate_reports(reports)
        points.append(SweepPoint(value=k, variant=cfg.variant,
                                 mean=mean, std=std, n_seeds=len(seeds)))
    return SweepReport(axis="K", points=points)


def case_trace(article: NewsArticle, detector: Detector, vocab, series: DerSeries,
               tsm, times) -> list[float]:
    """Probability of the article being fake at each requested time.

    Times live on the series' normalized axis (0 is the global prompt, 1
    the last trained period). Continuous models evaluate at the exact
    times; the static and recurrent variants only have per-period prompts,
    so each time snaps to the nearest one.
    """
    ids = np.asarray(vocab.encode(article.text), dtype=np.int64)[None, :]
    times = [float(t) for t in times]
    span = series.entries[-1].abs_index - series.z0_abs_index

    if isinstance(tsm, OdeModel):
        order = np.argsort(times)
        states = tsm.trajectory(series.z0.data, [times[i] for i in order])
        prompts = [None] * len(times)
        for rank, i in enumerate(order):
            prompts[i] = states[rank]
    elif isinstance(tsm, PtModel):
        prompts = [tsm.forecast(series, t * span) for t in times]
    else:
        knots = [(0.0, series.z0.data)] + \
            [(series.time_of(e.abs_index), e.z.data) for e in series.entries]
        prompts = []
        for t in times:
            _, z = min(knots, key=lambda kz: abs(kz[0] - t))
            prompts.append(z)
    return [float(score_articles(detector, z, ids)[0]) for z in prompts]
