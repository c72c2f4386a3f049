"""Timestamped article ingestion, tokenization, and period partitioning.

Articles arrive as JSON lines with day-precision timestamps. A dataset is
partitioned into contiguous periods at yearly or seasonal granularity;
seasons are calendar quarters anchored at March/June/September/December.
Calendar spans with no articles produce no period: indices are renumbered
contiguously, but every period keeps its absolute calendar index so that
continuous-time models can see the real gaps.
"""
from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import date

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, CLS = 0, 1, 2

_TOKEN_RE = re.compile(r"[㐀-䶿一-鿿]|[a-z0-9]+")


def normalize_text(text: str) -> str:
    return unicodedata.normalize("NFKC", text).strip()


def tokenize_text(text: str) -> list[str]:
    """Lowercased alphanumeric runs for Latin scripts; CJK codepoints become
    single-character tokens. Punctuation and whitespace only separate."""
    return _TOKEN_RE.findall(normalize_text(text).lower())


@dataclass
class NewsArticle:
    id: str
    text: str
    label: int
    timestamp: date


@dataclass
class Period:
    index: int          # contiguous 1..T
    abs_index: int      # calendar position (year, or absolute season count)
    start: date         # inclusive
    end: date           # exclusive
    article_idx: list[int] = field(default_factory=list)


@dataclass
class TemporalDataset:
    articles: list[NewsArticle]
    interval: str | None = None
    periods: list[Period] = field(default_factory=list)

    @property
    def n_periods(self) -> int:
        return len(self.periods)

    def period_articles(self, tau: int) -> list[NewsArticle]:
        p = self.periods[tau - 1]
        assert p.index == tau
        return [self.articles[i] for i in p.article_idx]


def _parse_record(obj: dict) -> NewsArticle:
    text = normalize_text(str(obj["text"]))
    if not text:
        raise ValueError("empty text")
    label = obj["label"]
    if label not in (0, 1):
        raise ValueError(f"label {label!r} not in {{0,1}}")
    ts = date.fromisoformat(str(obj["timestamp"]))
    return NewsArticle(id=str(obj["id"]), text=text, label=int(label), timestamp=ts)


def load_jsonl(path: str) -> TemporalDataset:
    """Read one JSON record per line, drop malformed lines (counted), and
    return articles sorted ascending by timestamp. More than 1% malformed
    lines is a hard error; so is an empty file."""
    articles = []
    malformed = 0
    total = 0
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            total += 1
            try:
                obj = json.loads(line)
                articles.append(_parse_record(obj))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
                malformed += 1
                log.debug("rejected line %d of %s: %s", lineno, path, e)
    if total == 0 or not articles:
        raise ValueError(f"no records in {path}")
    if malformed > 0.01 * total:
        raise ValueError(f"{malformed}/{total} malformed lines in {path}")
    if malformed:
        log.warning("%d malformed lines rejected from %s", malformed, path)
    articles.sort(key=lambda a: a.timestamp)  # stable: ties keep file order
    return TemporalDataset(articles=articles)


def _season_abs_index(d: date) -> int:
    # quarters anchored at Mar/Jun/Sep/Dec; December joins the next winter
    return (d.year * 12 + d.month - 3) // 3


def abs_period_index(ts: date, interval: str) -> int:
    """Calendar position of the period containing `ts` under `interval`."""
    if interval == "yearly":
        return ts.year
    if interval == "seasonal":
        return _season_abs_index(ts)
    raise ValueError(f"unknown interval {interval!r}")


def _season_range(abs_idx: int) -> tuple[date, date]:
    start_m = abs_idx * 3 + 3
    end_m = start_m + 3

    def to_date(m):
        y, mm = divmod(m, 12)
        if mm == 0:
            y, mm = y - 1, 12
        return date(y, mm, 1)

    return to_date(start_m), to_date(end_m)


def split_temporal(dataset: TemporalDataset, interval: str) -> TemporalDataset:
    """Assign every article to a period and renumber non-empty periods
    contiguously from 1. The absolute calendar index of each period is kept
    so downstream models can recover true gaps."""
    if interval not in ("yearly", "seasonal"):
        raise ValueError(f"unknown interval {interval!r}")
    if not dataset.articles:
        raise ValueError("cannot split an empty dataset")
    arts = sorted(dataset.articles, key=lambda a: a.timestamp)
    buckets: dict[int, list[int]] = {}
    for i, a in enumerate(arts):
        key = a.timestamp.year if interval == "yearly" else _season_abs_index(a.timestamp)
        buckets.setdefault(key, []).append(i)
    periods = []
    for tau, abs_idx in enumerate(sorted(buckets), start=1):
        if interval == "yearly":
            start, end = date(abs_idx, 1, 1), date(abs_idx + 1, 1, 1)
        else:
            start, end = _season_range(abs_idx)
        periods.append(Period(index=tau, abs_index=abs_idx, start=start, end=end,
                              article_idx=buckets[abs_idx]))
    if interval == "seasonal" and len(periods) == 1:
        log.warning("seasonal split produced a single period")
    return TemporalDataset(articles=arts, interval=interval, periods=periods)


def holdout_final_year(dataset: TemporalDataset) -> tuple[list[NewsArticle], list[NewsArticle], list[NewsArticle]]:
    """Hold out the final calendar year: chronological first half becomes
    validation, second half test; everything earlier is training. The
    holdout unit is a year regardless of the period interval, so the test
    set stays fixed across interval sweeps."""
    arts = sorted(dataset.articles, key=lambda a: a.timestamp)
    last_year = arts[-1].timestamp.year
    train = [a for a in arts if a.timestamp.year < last_year]
    hold = [a for a in arts if a.timestamp.year == last_year]
    if not train:
        raise ValueError("all articles fall in the final year; nothing to train on")
    half = len(hold) // 2
    return train, hold[:half], hold[half:]


class Vocabulary:
    """Token to id map with PAD=0, UNK=1, CLS=2 and a fixed encode length."""

    def __init__(self, token_to_id: dict[str, int], max_len: int):
        self.token_to_id = token_to_id
        self.max_len = max_len
        self.id_to_token = {i: t for t, i in token_to_id.items()}
        self.id_to_token.update({PAD: "<pad>", UNK: "<unk>", CLS: "<cls>"})

    @property
    def size(self) -> int:
        return 3 + len(self.token_to_id)

    @classmethod
    def build(cls, texts, max_len: int, min_freq: int = 2) -> "Vocabulary":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in tokenize_text(text):
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted((t for t, c in counts.items() if c >= min_freq),
                      key=lambda t: (-counts[t], t))
        return cls({t: i + 3 for i, t in enumerate(kept)}, max_len=max_len)

    def encode(self, text: str) -> np.ndarray:
        ids = [CLS]
        for tok in tokenize_text(text)[: self.max_len - 1]:
            ids.append(self.token_to_id.get(tok, UNK))
        while len(ids) < self.max_len:
            ids.append(PAD)
        return np.asarray(ids, dtype=np.int64)

    def decode(self, ids) -> list[str]:
        return [self.id_to_token.get(int(i), "<unk>") for i in ids]

    def save(self, path: str) -> None:
        payload = {"max_len": self.max_len, "token_to_id": self.token_to_id}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, sort_keys=True, separators=(",", ":"))

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        return cls(payload["token_to_id"], max_len=payload["max_len"])


def tokenize(article: NewsArticle, vocab: Vocabulary) -> np.ndarray:
    """Fixed-length id sequence: leading CLS, then tokens, PAD-filled."""
    return vocab.encode(article.text)


def encode_batch(articles, vocab: Vocabulary) -> np.ndarray:
    return np.stack([vocab.encode(a.text) for a in articles])


def write_jsonl(path: str, articles) -> None:
    """One compact sorted-key record per line; byte-deterministic for a
    given article list."""
    with open(path, "w", encoding="utf-8") as f:
        for a in articles:
            rec = {"id": a.id, "label": a.label,
                   "text": a.text, "timestamp": a.timestamp.isoformat()}
            f.write(json.dumps(rec, sort_keys=True, separators=(",", ":")))
            f.write("\n")
