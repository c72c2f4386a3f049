"""Estimator facade with the usual fit/predict surface.

Wraps the full two-stage pipeline so the classifier slots into generic
model-selection tooling: constructor arguments mirror the run
configuration one to one, get_params/set_params expose them, and
predictions use the forecast prompt for the period after training.
"""
from __future__ import annotations

from dataclasses import fields
from datetime import date

import numpy as np

from .data import NewsArticle, TemporalDataset, encode_batch
from .train import RunConfig, predict_future, run_pipeline, score_articles

_PARAM_NAMES = tuple(f.name for f in fields(RunConfig))


def _as_article(x, i: int, label) -> NewsArticle:
    if isinstance(x, NewsArticle):
        if label is not None:
            return NewsArticle(id=x.id, text=x.text, label=int(label),
                               timestamp=x.timestamp)
        return x
    if isinstance(x, dict):
        ts = x["timestamp"]
        lab = label if label is not None else x.get("label", 0)
        return NewsArticle(id=str(x.get("id", i)), text=x["text"],
                           label=int(lab), timestamp=_as_date(ts))
    text, ts = x  # (text, timestamp) pairs need labels via y
    return NewsArticle(id=str(i), text=text, label=int(label or 0),
                       timestamp=_as_date(ts))


def _as_date(ts) -> date:
    return ts if isinstance(ts, date) else date.fromisoformat(str(ts))


class MisderClassifier:
    """Misinformation classifier trained on time-stamped articles.

    fit(X, y) accepts articles, dicts with text/timestamp keys, or
    (text, timestamp) pairs; y holds the binary labels (1 = fake) and may
    be omitted when X items carry their own. Prediction scores any text
    against the prompt forecast for the first period after the training
    data.
    """

    def __init__(self, interval: str = "yearly", variant: str = "static",
                 e_w: int = 20, e_d: int = 10, batch_size: int = 64,
                 lr_detector: float = 7e-5, lr_der: float = 1e-5,
                 lr_tsm: float = 1e-3, patience: int = 5, seed: int = 0,
                 stage2_mode: str = "interleaved",
                 period_order: str = "round_robin", der_epochs: int = 3,
                 der_step_floor: int = 50, k: int = 32, d: int = 64,
                 n_heads: int = 4, n_layers: int = 2, pooling: str = "mean",
                 max_len: int = 64, min_freq: int = 2, lstm_hidden: int = 128,
                 ode_hidden: int = 256, pt_model_dim: int = 128,
                 pt_heads: int = 4, pt_layers: int = 2, pt_max_pos: int = 64):
        args = locals()
        for name in _PARAM_NAMES:
            setattr(self, name, args[name])

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in _PARAM_NAMES}

    def set_params(self, **params) -> "MisderClassifier":
        for name, value in params.items():
            if name not in _PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _config(self) -> RunConfig:
        return RunConfig(**self.get_params())

    def fit(self, X, y=None) -> "MisderClassifier":
        if y is not None and len(y) != len(X):
            raise ValueError("X and y length mismatch")
        articles = [_as_article(x, i, None if y is None else y[i])
                    for i, x in enumerate(X)]
        dataset = TemporalDataset(articles=articles)
        self.artifacts_ = run_pipeline(dataset, self._config())
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "artifacts_"):
            raise RuntimeError("classifier is not fitted yet")

    def _scores(self, X) -> np.ndarray:
        self._check_fitted()
        art = self.artifacts_
        articles = [_as_article(x, i, None) for i, x in enumerate(X)]
        z_hat = art.z_future
        if z_hat is None:
            z_hat = predict_future(None, art.series, art.future_abs)
        ids = encode_batch(articles, art.vocab)
        return score_articles(art.detector, z_hat, ids)

    def predict_proba(self, X) -> np.ndarray:
        p_fake = self._scores(X)
        return np.stack([1.0 - p_fake, p_fake], axis=1)

    def predict(self, X) -> np.ndarray:
        return (self._scores(X) >= 0.5).astype(np.int64)

    def score(self, X, y) -> float:
        y = np.asarray(y)
        return float((self.predict(X) == y).mean())
