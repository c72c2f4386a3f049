import numpy as np
import pytest

from misder.estimator import MisderClassifier
from misder.train import RunConfig

from test_train import tiny_dataset

TINY = dict(e_w=1, e_d=1, batch_size=32, lr_detector=1e-3, lr_der=1e-3,
            stage2_mode="sequential", der_epochs=1, der_step_floor=2,
            k=2, d=16, n_heads=2, n_layers=1, max_len=12, min_freq=1,
            lstm_hidden=8, ode_hidden=8, pt_model_dim=8, pt_max_pos=16)


def articles():
    return tiny_dataset().articles


class TestParams:
    def test_get_params_covers_run_config(self):
        est = MisderClassifier()
        from dataclasses import fields
        assert set(est.get_params()) == {f.name for f in fields(RunConfig)}

    def test_set_params_round_trip(self):
        est = MisderClassifier()
        est.set_params(variant="lstm", seed=7)
        assert est.get_params()["variant"] == "lstm"
        assert est.get_params()["seed"] == 7

    def test_unknown_param_is_error(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            MisderClassifier().set_params(dropout=0.1)

    def test_clone_compatible(self):
        sklearn = pytest.importorskip("sklearn")
        from sklearn.base import clone
        est = MisderClassifier(variant="ode", seed=3, **TINY)
        twin = clone(est)
        assert twin.get_params() == est.get_params()
        assert not hasattr(twin, "artifacts_")


class TestFit:
    def test_fit_on_articles_and_predict(self):
        data = articles()
        est = MisderClassifier(**TINY).fit(data)
        test = [a.text for a in data[-8:]]
        # prediction takes bare texts once fitted
        proba = est.predict_proba([{"text": t, "timestamp": "2013-01-01"}
                                   for t in test])
        assert proba.shape == (8, 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        preds = est.predict([{"text": t, "timestamp": "2013-01-01"}
                             for t in test])
        assert set(np.unique(preds)) <= {0, 1}
        np.testing.assert_array_equal(est.classes_, [0, 1])

    def test_y_overrides_item_labels(self):
        data = articles()
        y = [1 - a.label for a in data]
        est = MisderClassifier(**TINY).fit(data, y)
        flipped = est.artifacts_.splits[0] + est.artifacts_.splits[1] \
            + est.artifacts_.splits[2]
        by_id = {a.id: a.label for a in flipped}
        for a, lab in zip(data, y):
            assert by_id[a.id] == lab

    def test_dict_rows_with_iso_timestamps(self):
        rows = [{"id": f"r{i}", "text": a.text, "label": a.label,
                 "timestamp": a.timestamp.isoformat()}
                for i, a in enumerate(articles())]
        est = MisderClassifier(**TINY).fit(rows)
        assert hasattr(est, "artifacts_")

    def test_length_mismatch_is_error(self):
        data = articles()
        with pytest.raises(ValueError, match="mismatch"):
            MisderClassifier(**TINY).fit(data, [0, 1])

    def test_predict_before_fit_is_error(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            MisderClassifier(**TINY).predict([{"text": "x",
                                               "timestamp": "2013-01-01"}])

    def test_score_is_accuracy(self):
        data = articles()
        est = MisderClassifier(**TINY).fit(data)
        X = [{"text": a.text, "timestamp": "2013-01-01"} for a in data[-10:]]
        y = [a.label for a in data[-10:]]
        s = est.score(X, y)
        manual = float((est.predict(X) == np.asarray(y)).mean())
        assert s == pytest.approx(manual)
        assert 0.0 <= s <= 1.0
