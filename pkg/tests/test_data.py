import json
import logging
from datetime import date

import numpy as np
import pytest

from misder.data import (CLS, PAD, UNK, NewsArticle, TemporalDataset, Vocabulary,
                         holdout_final_year, load_jsonl, split_temporal,
                         tokenize, tokenize_text, write_jsonl)


def make_article(i, ts, label=0, text="some words here"):
    return NewsArticle(id=f"a{i}", text=text, label=label, timestamp=ts)


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def record(i="x1", text="hello world", label=0, ts="2015-06-01"):
    return json.dumps({"id": i, "text": text, "label": label, "timestamp": ts})


class TestLoadJsonl:
    def test_loads_and_sorts_by_timestamp(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [record(i="b", ts="2016-01-01"),
                        record(i="a", ts="2015-01-01")])
        ds = load_jsonl(str(p))
        assert [a.id for a in ds.articles] == ["a", "b"]

    def test_empty_file_is_error(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text("\n\n")
        with pytest.raises(ValueError, match="no records"):
            load_jsonl(str(p))

    def test_malformed_minority_tolerated(self, tmp_path, caplog):
        p = tmp_path / "d.jsonl"
        lines = [record(i=f"r{i}") for i in range(200)] + ["{not json"]
        write_lines(p, lines)
        with caplog.at_level(logging.WARNING):
            ds = load_jsonl(str(p))
        assert len(ds.articles) == 200
        assert any("malformed" in r.message for r in caplog.records)

    def test_malformed_majority_is_error(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [record(), "{broken", json.dumps({"id": "q"})])
        with pytest.raises(ValueError, match="malformed"):
            load_jsonl(str(p))

    def test_bad_timestamp_rejected(self, tmp_path):
        p = tmp_path / "d.jsonl"
        lines = [record(i=f"r{i}") for i in range(300)]
        lines.append(record(i="bad", ts="not-a-date"))
        write_lines(p, lines)
        ds = load_jsonl(str(p))
        assert all(a.id != "bad" for a in ds.articles)

    def test_bad_label_rejected(self, tmp_path):
        p = tmp_path / "d.jsonl"
        lines = [record(i=f"r{i}") for i in range(300)]
        lines.append(record(i="bad", label=2))
        write_lines(p, lines)
        ds = load_jsonl(str(p))
        assert all(a.id != "bad" for a in ds.articles)

    def test_single_record_gives_one_period(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [record()])
        ds = split_temporal(load_jsonl(str(p)), "yearly")
        assert ds.n_periods == 1

    def test_round_trip_with_writer(self, tmp_path):
        arts = [make_article(i, date(2012, 1 + i, 3), label=i % 2) for i in range(5)]
        p = tmp_path / "d.jsonl"
        write_jsonl(str(p), arts)
        back = load_jsonl(str(p))
        assert [a.id for a in back.articles] == [a.id for a in arts]
        assert [a.label for a in back.articles] == [a.label for a in arts]


class TestSplitTemporal:
    def test_yearly_span(self):
        arts = [make_article(i, date(2010 + i, 6, 1)) for i in range(8)]
        ds = split_temporal(TemporalDataset(arts), "yearly")
        assert ds.n_periods == 8
        assert [p.index for p in ds.periods] == list(range(1, 9))

    def test_empty_years_dropped_and_renumbered(self):
        arts = [make_article(0, date(2010, 3, 1)), make_article(1, date(2013, 3, 1))]
        ds = split_temporal(TemporalDataset(arts), "yearly")
        assert ds.n_periods == 2
        assert [p.index for p in ds.periods] == [1, 2]
        assert [p.abs_index for p in ds.periods] == [2010, 2013]
        assert ds.periods[0].start == date(2010, 1, 1)
        assert ds.periods[1].end == date(2014, 1, 1)

    def test_seasonal_two_periods_contiguous_indices(self):
        arts = [make_article(0, date(2017, 1, 10)), make_article(1, date(2017, 7, 10))]
        ds = split_temporal(TemporalDataset(arts), "seasonal")
        assert ds.n_periods == 2
        assert [p.index for p in ds.periods] == [1, 2]

    def test_december_joins_following_winter(self):
        arts = [make_article(0, date(2016, 12, 5)), make_article(1, date(2017, 2, 20)),
                make_article(2, date(2017, 3, 1))]
        ds = split_temporal(TemporalDataset(arts), "seasonal")
        assert ds.n_periods == 2
        assert len(ds.periods[0].article_idx) == 2  # dec + feb share the winter
        assert ds.periods[0].start == date(2016, 12, 1)
        assert ds.periods[0].end == date(2017, 3, 1)

    def test_partition_property(self):
        rng = np.random.default_rng(0)
        arts = [make_article(i, date(int(y), int(m), int(d)))
                for i, (y, m, d) in enumerate(zip(rng.integers(2010, 2016, 60),
                                                  rng.integers(1, 13, 60),
                                                  rng.integers(1, 29, 60)))]
        ds = split_temporal(TemporalDataset(arts), "seasonal")
        ids = sorted(a.id for a in ds.articles)
        seen = sorted(ds.articles[i].id for p in ds.periods for i in p.article_idx)
        assert seen == ids

    def test_sorting_property(self):
        arts = [make_article(i, date(2012, 12 - i, 1)) for i in range(6)]
        ds = split_temporal(TemporalDataset(arts), "seasonal")
        flat = [ds.articles[i].timestamp for p in ds.periods for i in p.article_idx]
        assert flat == sorted(flat)

    def test_single_date_seasonal_warns(self, caplog):
        arts = [make_article(i, date(2015, 5, 5)) for i in range(3)]
        with caplog.at_level(logging.WARNING):
            ds = split_temporal(TemporalDataset(arts), "seasonal")
        assert ds.n_periods == 1
        assert any("single period" in r.message for r in caplog.records)

    def test_unknown_interval(self):
        with pytest.raises(ValueError, match="interval"):
            split_temporal(TemporalDataset([make_article(0, date(2015, 1, 1))]), "daily")

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            split_temporal(TemporalDataset([]), "yearly")


class TestHoldout:
    def test_final_year_split_chronological(self):
        arts = [make_article(i, date(2015 + i // 4, 1 + (i % 4) * 3, 2)) for i in range(12)]
        train, val, test = holdout_final_year(TemporalDataset(arts))
        assert all(a.timestamp.year < 2017 for a in train)
        assert all(a.timestamp.year == 2017 for a in val + test)
        assert max(a.timestamp for a in val) <= min(a.timestamp for a in test)

    def test_all_in_one_year_is_error(self):
        arts = [make_article(i, date(2015, 1 + i, 1)) for i in range(4)]
        with pytest.raises(ValueError):
            holdout_final_year(TemporalDataset(arts))


class TestTokenizer:
    def test_latin_lowercases_and_splits_punct(self):
        assert tokenize_text("Breaking News: floods!") == ["breaking", "news", "floods"]

    def test_cjk_per_codepoint(self):
        assert tokenize_text("洪水 warning") == ["洪", "水", "warning"]

    def test_numbers_kept(self):
        assert tokenize_text("99 bottles") == ["99", "bottles"]


class TestVocabulary:
    def test_min_freq_drops_singletons(self):
        v = Vocabulary.build(["a a b", "a c c"], max_len=8)
        assert "a" in v.token_to_id and "c" in v.token_to_id
        assert "b" not in v.token_to_id

    def test_special_ids(self):
        assert (PAD, UNK, CLS) == (0, 1, 2)
        v = Vocabulary.build(["x x"], max_len=4)
        assert v.token_to_id["x"] == 3

    def test_encode_shape_and_padding(self):
        v = Vocabulary.build(["w w"], max_len=5)
        ids = v.encode("w")
        assert ids.shape == (5,)
        assert ids[0] == CLS and ids[1] == v.token_to_id["w"]
        assert list(ids[2:]) == [PAD, PAD, PAD]

    def test_truncation(self):
        v = Vocabulary.build(["w w"], max_len=3)
        ids = v.encode("w w w w w w")
        assert ids.shape == (3,)
        assert list(ids) == [CLS, 3, 3]

    def test_unknown_maps_to_unk(self):
        v = Vocabulary.build(["w w"], max_len=4)
        assert v.encode("zzz")[1] == UNK

    def test_known_tokens_round_trip(self):
        v = Vocabulary.build(["alpha alpha beta beta"], max_len=6)
        ids = v.encode("alpha beta")
        assert v.decode(ids[1:3]) == ["alpha", "beta"]

    def test_empty_text_is_cls_then_pad(self):
        v = Vocabulary.build(["w w"], max_len=4)
        art = make_article(0, date(2015, 1, 1), text="...")
        ids = tokenize(art, v)
        assert list(ids) == [CLS, PAD, PAD, PAD]

    def test_deterministic(self):
        v = Vocabulary.build(["m m n n"], max_len=4)
        a = v.encode("m n")
        b = v.encode("m n")
        assert np.array_equal(a, b)
