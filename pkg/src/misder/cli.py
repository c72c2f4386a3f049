"""Command-line entry point.

Each command is an individually resumable pipeline stage that writes its
artifacts plus a manifest (resolved config, seed, inputs, version) into
its output directory, so any directory can be reproduced by rerunning the
command recorded in its manifest. Exit codes: 0 success, 1 usage error,
2 runtime failure (which leaves a FAILED sentinel in the output
directory).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint, save_params, load_params_into
from .data import (TemporalDataset, Vocabulary, holdout_final_year, load_jsonl,
                   split_temporal, write_jsonl)
from .der import DerSeries
from .detector import Detector, new_der
from .experiments import (case_trace, drop_rate_experiment, evaluate_future,
                          interval_sweep, k_sweep)
from .pretrained import PtModel
from .synthetic import (DriftConfig, DynamicsConfig, FAMILIES,
                        gen_dynamics_corpus, gen_synthetic_drift, load_corpus,
                        save_corpus)
from .train import (RunConfig, dynamic_env_learning, make_tsm, predict_future,
                    run_pipeline, seed_streams, warmup)

VERSION_STRING = f"misder {__version__}"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # spec'd exit codes: usage errors are 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise UsageError(f"missing artifact: {what} at {path}")
    return path


def _write_manifest(out_dir: str, command: str, config: dict, seed: int,
                    inputs: dict) -> None:
    manifest = {"command": command, "config": config, "seed": seed,
                "inputs": inputs, "version": VERSION_STRING}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)


def _read_manifest(run_dir: str) -> dict:
    path = _require_file(os.path.join(run_dir, "manifest.json"), "manifest")
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _load_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    raw = {}
    if getattr(args, "config", None):
        path = _require_file(args.config, "config file")
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}")
    for flag, key in (("seed", "seed"), ("variant", "variant"),
                      ("interval", "interval"), ("der_len", "k")):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    try:
        return RunConfig.from_dict(raw)
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad config: {e}")


def _merged_config(base: RunConfig, args, frozen: tuple = ()) -> RunConfig:
    """Layer a config file and flags over an upstream command's config.
    Fields in `frozen` are fixed by that command's checkpoints."""
    raw = base.to_dict()
    if getattr(args, "config", None):
        path = _require_file(args.config, "config file")
        try:
            with open(path, encoding="utf-8") as f:
                raw.update(json.load(f))
        except json.JSONDecodeError as e:
            raise UsageError(f"config file is not valid JSON: {e}")
    for flag, key in (("seed", "seed"), ("variant", "variant"),
                      ("interval", "interval"), ("der_len", "k")):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    try:
        cfg = RunConfig.from_dict(raw)
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad config: {e}")
    for name in frozen:
        if getattr(cfg, name) != getattr(base, name):
            raise UsageError(f"config field {name!r} is fixed by the "
                             f"warm-up checkpoint (got {getattr(cfg, name)!r}, "
                             f"checkpoint has {getattr(base, name)!r})")
    return cfg


def _add_common(p: argparse.ArgumentParser, out_required: bool = True):
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--config", help="JSON file of run-config fields")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", choices=("static", "lstm", "ode", "pt"))
    p.add_argument("--interval", choices=("yearly", "seasonal"))
    p.add_argument("--der-len", dest="der_len", type=int, default=None,
                   help="prompt rows K")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="misder", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=VERSION_STRING)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a drifting synthetic dataset")
    _add_common(p)
    p.add_argument("--n-periods", type=int, default=8)
    p.add_argument("--per-period", type=int, default=500)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--drift-amplitude", type=float, default=0.8)
    p.add_argument("--start-year", type=int, default=2010)

    p = sub.add_parser("gen-dynamics", help="generate a trajectory corpus "
                       "for dynamics pre-training")
    _add_common(p)
    p.add_argument("--families", default=",".join(FAMILIES))
    p.add_argument("--n-traj", type=int, default=64)
    p.add_argument("--grid-len", type=int, default=16)

    p = sub.add_parser("pretrain-dynamics", help="pre-train the sequence "
                       "model on a trajectory corpus")
    _add_common(p)
    p.add_argument("--corpus", required=True, help="corpus checkpoint path")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--pt-batch", type=int, default=8)

    p = sub.add_parser("warmup", help="stage one: train detector and global prompt")
    _add_common(p)
    p.add_argument("--data", required=True, help="articles jsonl path")

    p = sub.add_parser("learn", help="stage two: per-period prompts and "
                       "sequence model")
    _add_common(p)
    p.add_argument("--warmup-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--drop-rate", type=float, default=0.0,
                   help="newest fraction of training data to discard")
    p.add_argument("--pretrained", help="checkpoint of a pre-trained "
                   "sequence model (pt variant)")

    p = sub.add_parser("predict", help="forecast the future period's prompt")
    _add_common(p)
    p.add_argument("--learn-dir", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("eval", help="score the forecast on the test split")
    _add_common(p)
    p.add_argument("--predict-dir", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("sweep", help="sensitivity and long-horizon sweeps")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=("drop_rate", "interval", "K"))
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.add_argument("--variants", default="static,lstm,ode,pt")
    p.add_argument("--rates", default="0.0,0.1,0.3,0.5")
    p.add_argument("--intervals", default="yearly,seasonal")
    p.add_argument("--ks", default="8,16,32")

    p = sub.add_parser("trace", help="per-time probabilities for one article")
    _add_common(p)
    p.add_argument("--learn-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--article-id", required=True)
    p.add_argument("--times", required=True, help="comma-separated times "
                   "on the normalized series axis")
    return parser


def _load_data(path: str) -> TemporalDataset:
    _require_file(path, "dataset")
    try:
        return load_jsonl(path)
    except (ValueError, KeyError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot parse dataset {path}: {e}")


def _load_warmup(warmup_dir: str):
    manifest = _read_manifest(warmup_dir)
    cfg = RunConfig.from_dict(manifest["config"])
    vocab = Vocabulary.load(_require_file(
        os.path.join(warmup_dir, "vocab.json"), "vocabulary"))
    detector = Detector(vocab.size, d=cfg.d, n_heads=cfg.n_heads,
                        n_layers=cfg.n_layers, pooling=cfg.pooling,
                        rng=np.random.default_rng(0))
    z0 = new_der(np.random.default_rng(0), cfg.k, cfg.d, tau=0)
    ckpt = _require_file(os.path.join(warmup_dir, "warmup.ckpt"),
                         "detector checkpoint")
    load_params_into(ckpt, detector.params() + [z0])
    return manifest, cfg, vocab, detector, z0


def _load_learn(learn_dir: str):
    manifest = _read_manifest(learn_dir)
    _, cfg_w, vocab, detector, z0 = _load_warmup(manifest["inputs"]["warmup_dir"])
    cfg = RunConfig.from_dict(manifest["config"])
    series = DerSeries.load(_require_file(
        os.path.join(learn_dir, "ders.ckpt"), "prompt series checkpoint"))
    tsm = None
    if cfg.variant != "static":
        tsm = make_tsm(cfg, np.random.default_rng(0))
        load_params_into(_require_file(os.path.join(learn_dir, "tsm.ckpt"),
                                       "sequence model checkpoint"),
                         tsm.params())
        if isinstance(tsm, PtModel):
            tsm.fitted = True  # checkpoints only exist for fitted models
    return manifest, cfg, vocab, detector, z0, series, tsm


def cmd_gen_data(args) -> int:
    cfg = DriftConfig(n_periods=args.n_periods, per_period_count=args.per_period,
                      vocab_size=args.vocab_size,
                      drift_amplitude=args.drift_amplitude,
                      seed=args.seed if args.seed is not None else 0,
                      start_year=args.start_year)
    dataset = gen_synthetic_drift(cfg)
    write_jsonl(os.path.join(args.out, "articles.jsonl"), dataset.articles)
    from dataclasses import asdict
    _write_manifest(args.out, "gen-data", asdict(cfg), cfg.seed, {})
    print(f"wrote {len(dataset.articles)} articles to {args.out}")
    return 0


def cmd_gen_dynamics(args) -> int:
    families = tuple(f.strip() for f in args.families.split(",") if f.strip())
    for fam in families:
        if fam not in FAMILIES:
            raise UsageError(f"unknown trajectory family {fam!r}")
    run_cfg = _load_config(args)  # trajectory states must match the prompt shape
    cfg = DynamicsConfig(families=families, n_traj=args.n_traj,
                         grid_len=args.grid_len, k=run_cfg.k, d=run_cfg.d,
                         seed=args.seed if args.seed is not None else 0)
    corpus = gen_dynamics_corpus(cfg)
    save_corpus(os.path.join(args.out, "corpus.ckpt"), corpus)
    from dataclasses import asdict
    _write_manifest(args.out, "gen-dynamics", asdict(cfg), cfg.seed, {})
    print(f"wrote {len(corpus.trajectories)} trajectories to {args.out}")
    return 0


def cmd_pretrain_dynamics(args) -> int:
    cfg = _load_config(args)
    corpus = load_corpus(_require_file(args.corpus, "trajectory corpus"))
    model = PtModel(cfg.k, cfg.d, model_dim=cfg.pt_model_dim,
                    n_heads=cfg.pt_heads, n_layers=cfg.pt_layers,
                    max_pos=cfg.pt_max_pos, lr=cfg.lr_tsm,
                    rng=seed_streams(cfg.seed)["tsm"])
    losses = model.pretrain(corpus, epochs=args.epochs, batch_size=args.pt_batch,
                            rng=np.random.default_rng(cfg.seed))
    save_params(os.path.join(args.out, "pt.ckpt"), model.params())
    with open(os.path.join(args.out, "pretrain_losses.json"), "w") as f:
        json.dump(losses, f)
    _write_manifest(args.out, "pretrain-dynamics", cfg.to_dict(), cfg.seed,
                    {"corpus": os.path.abspath(args.corpus)})
    print(f"pre-trained for {args.epochs} epochs; final loss {losses[-1]:.4f}")
    return 0


def cmd_warmup(args) -> int:
    cfg = _load_config(args)
    dataset = _load_data(args.data)
    train, val, _ = holdout_final_year(dataset)
    vocab = Vocabulary.build([a.text for a in train], cfg.max_len,
                             min_freq=cfg.min_freq)
    streams = seed_streams(cfg.seed)
    detector = Detector(vocab.size, d=cfg.d, n_heads=cfg.n_heads,
                        n_layers=cfg.n_layers, pooling=cfg.pooling,
                        rng=streams["model"])
    z0 = new_der(streams["model"], cfg.k, cfg.d, tau=0)
    history = warmup(train, val, detector, z0, vocab, cfg, streams["warmup"])
    vocab.save(os.path.join(args.out, "vocab.json"))
    save_params(os.path.join(args.out, "warmup.ckpt"), detector.params() + [z0])
    with open(os.path.join(args.out, "history.json"), "w") as f:
        json.dump(history, f, sort_keys=True)
    _write_manifest(args.out, "warmup", cfg.to_dict(), cfg.seed,
                    {"data": os.path.abspath(args.data)})
    best = max(history["val_macro_f1"], default=float("nan"))
    print(f"warm-up done; best validation macro F1 {best:.4f}")
    return 0


def cmd_learn(args) -> int:
    manifest, base_cfg, vocab, detector, z0 = _load_warmup(args.warmup_dir)
    cfg = _merged_config(base_cfg, args,
                         frozen=("k", "d", "n_heads", "n_layers", "pooling",
                                 "max_len", "min_freq"))
    if not 0.0 <= args.drop_rate < 1.0:
        raise UsageError(f"drop rate {args.drop_rate} outside [0, 1)")
    dataset = _load_data(args.data)
    train, _, _ = holdout_final_year(dataset)
    n_drop = int(round(args.drop_rate * len(train)))
    if n_drop:
        train = train[:len(train) - n_drop]
    if not train:
        raise UsageError("drop rate leaves no training data")
    detector.freeze()
    train_ds = split_temporal(TemporalDataset(articles=train), cfg.interval)
    streams = seed_streams(cfg.seed)
    tsm = None
    if cfg.variant == "pt" and args.pretrained:
        tsm = PtModel(cfg.k, cfg.d, model_dim=cfg.pt_model_dim,
                      n_heads=cfg.pt_heads, n_layers=cfg.pt_layers,
                      max_pos=cfg.pt_max_pos, lr=cfg.lr_tsm,
                      rng=streams["tsm"])
        load_params_into(_require_file(args.pretrained,
                                       "pre-trained sequence model"),
                         tsm.params())
        tsm.pretrained = True
    elif cfg.variant != "static":
        tsm = make_tsm(cfg, streams["tsm"])
    series, history = dynamic_env_learning(train_ds, detector, z0, tsm, vocab,
                                           cfg, streams["stage2"])
    series.save(os.path.join(args.out, "ders.ckpt"))
    if tsm is not None:
        save_params(os.path.join(args.out, "tsm.ckpt"), tsm.params())
    with open(os.path.join(args.out, "history.json"), "w") as f:
        json.dump({k: v for k, v in history.items() if k != "der_steps"} |
                  {"der_steps": {str(t): n for t, n in history["der_steps"].items()}},
                  f, sort_keys=True)
    _write_manifest(args.out, "learn", cfg.to_dict(), cfg.seed,
                    {"warmup_dir": os.path.abspath(args.warmup_dir),
                     "data": os.path.abspath(args.data),
                     "drop_rate": args.drop_rate,
                     "pretrained": args.pretrained and os.path.abspath(args.pretrained)})
    print(f"learned {series.n_periods} period prompts ({cfg.variant})")
    return 0


def cmd_predict(args) -> int:
    manifest, cfg, vocab, detector, z0, series, tsm = _load_learn(args.learn_dir)
    dataset = _load_data(args.data)
    _, _, test = holdout_final_year(dataset)
    from .data import abs_period_index
    future_abs = min(abs_period_index(a.timestamp, cfg.interval) for a in test) \
        if test else series.entries[-1].abs_index + 1
    z_hat = predict_future(tsm, series, future_abs)
    save_checkpoint(os.path.join(args.out, "future.ckpt"), {"der.future": z_hat})
    _write_manifest(args.out, "predict", cfg.to_dict(), cfg.seed,
                    {"learn_dir": os.path.abspath(args.learn_dir),
                     "data": os.path.abspath(args.data),
                     "future_abs": future_abs})
    print(f"forecast prompt for period {future_abs} written")
    return 0


def cmd_eval(args) -> int:
    manifest = _read_manifest(args.predict_dir)
    _, cfg, vocab, detector, z0, series, tsm = \
        _load_learn(manifest["inputs"]["learn_dir"])
    z_hat = load_checkpoint(_require_file(
        os.path.join(args.predict_dir, "future.ckpt"),
        "forecast prompt checkpoint"))["der.future"]
    dataset = _load_data(args.data)
    train, _, test = holdout_final_year(dataset)
    if not test:
        raise UsageError("dataset has no test split")
    from .data import encode_batch
    from .metrics import metric_report
    from .train import score_articles
    train_max = max(a.timestamp for a in train)
    leaked = [a.id for a in test if a.timestamp <= train_max]
    if leaked:
        raise UsageError(f"temporal leakage: {len(leaked)} test article(s) at or "
                         f"before training maximum {train_max.isoformat()}")
    scores = score_articles(detector, z_hat, encode_batch(test, vocab))
    labels = np.array([a.label for a in test], dtype=np.float64)
    report = metric_report(scores, labels, seed=cfg.seed)
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as f:
        f.write(report.to_json())
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as f:
        f.write(report.to_text() + "\n")
    _write_manifest(args.out, "eval", cfg.to_dict(), cfg.seed,
                    {"predict_dir": os.path.abspath(args.predict_dir),
                     "data": os.path.abspath(args.data)})
    print(report.to_text())
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    dataset = _load_data(args.data)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    if args.axis == "drop_rate":
        rates = tuple(float(r) for r in args.rates.split(","))
        variants = tuple(v.strip() for v in args.variants.split(","))
        report = drop_rate_experiment(dataset, cfg, rates=rates,
                                      variants=variants, seeds=seeds)
    elif args.axis == "interval":
        intervals = tuple(i.strip() for i in args.intervals.split(","))
        report = interval_sweep(dataset, cfg, intervals=intervals, seeds=seeds)
    else:
        ks = tuple(int(k) for k in args.ks.split(","))
        report = k_sweep(dataset, cfg, ks=ks, seeds=seeds)
    paths = report.write(os.path.join(args.out, "sweep"))
    _write_manifest(args.out, "sweep", cfg.to_dict(), cfg.seed,
                    {"data": os.path.abspath(args.data), "axis": args.axis,
                     "seeds": list(seeds)})
    print(f"sweep over {args.axis} written to {paths['json']}")
    return 0


def cmd_trace(args) -> int:
    manifest, cfg, vocab, detector, z0, series, tsm = _load_learn(args.learn_dir)
    dataset = _load_data(args.data)
    by_id = {a.id: a for a in dataset.articles}
    if args.article_id not in by_id:
        raise UsageError(f"article {args.article_id!r} not in dataset")
    times = [float(t) for t in args.times.split(",")]
    probs = case_trace(by_id[args.article_id], detector, vocab, series, tsm, times)
    payload = {"article_id": args.article_id, "times": times, "probs": probs}
    with open(os.path.join(args.out, "trace.json"), "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True)
    _write_manifest(args.out, "trace", cfg.to_dict(), cfg.seed,
                    {"learn_dir": os.path.abspath(args.learn_dir),
                     "data": os.path.abspath(args.data)})
    print(json.dumps(payload))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gen-dynamics": cmd_gen_dynamics,
    "pretrain-dynamics": cmd_pretrain_dynamics,
    "warmup": cmd_warmup,
    "learn": cmd_learn,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "trace": cmd_trace,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out_dir = getattr(args, "out", None)
    try:
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"misder {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        if out_dir and os.path.isdir(out_dir):
            with open(os.path.join(out_dir, "FAILED"), "w", encoding="utf-8") as f:
                f.write(f"{type(e).__name__}: {e}\n")
                f.write(traceback.format_exc())
        print(f"misder {args.command} failed: {type(e).__name__}: {e}",
              file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
