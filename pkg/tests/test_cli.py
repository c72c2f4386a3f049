"""End-to-end command tests; every invocation goes through main(argv)
in process so exit codes and artifacts are checked directly."""
import json
import os

import pytest

from misder.cli import main

TINY_CONFIG = {
    "e_w": 1, "e_d": 1, "batch_size": 32,
    "lr_detector": 1e-3, "lr_der": 1e-3,
    "stage2_mode": "sequential", "der_epochs": 1, "der_step_floor": 2,
    "k": 2, "d": 16, "n_heads": 2, "n_layers": 1,
    "max_len": 12, "min_freq": 1,
    "lstm_hidden": 8, "ode_hidden": 8, "pt_model_dim": 8, "pt_max_pos": 16,
}

GEN_FLAGS = ["--n-periods", "3", "--per-period", "40",
             "--vocab-size", "400", "--seed", "3"]


def read(path):
    with open(path, "rb") as f:
        return f.read()


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """One gen-data -> warmup -> learn chain shared by the read-only tests."""
    root = tmp_path_factory.mktemp("chain")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG | {"variant": "lstm", "seed": 3}))
    data_dir, warm_dir, learn_dir = root / "data", root / "warm", root / "learn"
    assert main(["gen-data", "--out", str(data_dir)] + GEN_FLAGS) == 0
    data = str(data_dir / "articles.jsonl")
    assert main(["warmup", "--out", str(warm_dir), "--data", data,
                 "--config", str(cfg_path)]) == 0
    assert main(["learn", "--out", str(learn_dir), "--data", data,
                 "--warmup-dir", str(warm_dir), "--config", str(cfg_path)]) == 0
    return {"root": root, "config": str(cfg_path), "data": data,
            "warm": str(warm_dir), "learn": str(learn_dir)}


class TestGenData:
    def test_two_runs_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen-data", "--out", str(a)] + GEN_FLAGS) == 0
        assert main(["gen-data", "--out", str(b)] + GEN_FLAGS) == 0
        assert read(a / "articles.jsonl") == read(b / "articles.jsonl")

    def test_manifest_records_the_generator_config(self, tmp_path):
        out = tmp_path / "d"
        main(["gen-data", "--out", str(out)] + GEN_FLAGS)
        manifest = json.loads(read(out / "manifest.json"))
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == 3
        assert manifest["config"]["n_periods"] == 3
        assert manifest["config"]["per_period_count"] == 40
        assert "version" in manifest

    def test_missing_out_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["gen-data"])
        assert exc.value.code == 1


class TestFullChain:
    def test_predict_then_eval_produces_a_report(self, chain, tmp_path):
        pred, ev = tmp_path / "pred", tmp_path / "eval"
        assert main(["predict", "--out", str(pred), "--data", chain["data"],
                     "--learn-dir", chain["learn"]]) == 0
        assert os.path.exists(pred / "future.ckpt")
        assert main(["eval", "--out", str(ev), "--data", chain["data"],
                     "--predict-dir", str(pred)]) == 0
        report = json.loads(read(ev / "report.json"))
        for field in ("macro_f1", "accuracy", "auc"):
            assert 0.0 <= report[field] <= 1.0
        manifest = json.loads(read(ev / "manifest.json"))
        assert manifest["inputs"]["predict_dir"] == str(pred)

    def test_learn_manifest_chains_back_to_warmup(self, chain):
        manifest = json.loads(read(os.path.join(chain["learn"], "manifest.json")))
        assert manifest["inputs"]["warmup_dir"] == chain["warm"]
        assert manifest["config"]["variant"] == "lstm"

    def test_learn_rejects_prompt_shape_change(self, chain, tmp_path, capsys):
        code = main(["learn", "--out", str(tmp_path / "l2"),
                     "--data", chain["data"], "--warmup-dir", chain["warm"],
                     "--config", chain["config"], "--der-len", "4"])
        assert code == 1
        assert "fixed by the warm-up checkpoint" in capsys.readouterr().err

    def test_eval_on_empty_dir_names_the_missing_artifact(self, chain, tmp_path, capsys):
        empty = tmp_path / "nothing"
        empty.mkdir()
        code = main(["eval", "--out", str(tmp_path / "ev"),
                     "--data", chain["data"], "--predict-dir", str(empty)])
        assert code == 1
        assert "missing artifact: manifest" in capsys.readouterr().err

    def test_runtime_failure_leaves_a_sentinel(self, chain, tmp_path, capsys):
        # all articles in one calendar year: stage one has nothing to train on
        lines = read(chain["data"]).decode().splitlines()
        final = [ln for ln in lines if json.loads(ln)["timestamp"][:4] == "2012"]
        one_year = tmp_path / "one_year.jsonl"
        one_year.write_text("\n".join(final) + "\n")
        out = tmp_path / "warm"
        code = main(["warmup", "--out", str(out), "--data", str(one_year)])
        assert code == 2
        assert os.path.exists(out / "FAILED")
        assert "ValueError" in read(out / "FAILED").decode()


class TestTrace:
    def test_trace_writes_probabilities(self, chain, tmp_path):
        first_id = json.loads(read(chain["data"]).splitlines()[0])["id"]
        out = tmp_path / "tr"
        code = main(["trace", "--out", str(out), "--data", chain["data"],
                     "--learn-dir", chain["learn"], "--article-id", first_id,
                     "--times", "0.0,0.5,1.0"])
        assert code == 0
        payload = json.loads(read(out / "trace.json"))
        assert payload["times"] == [0.0, 0.5, 1.0]
        assert len(payload["probs"]) == 3
        assert all(0.0 <= p <= 1.0 for p in payload["probs"])

    def test_unknown_article_is_usage_error(self, chain, tmp_path, capsys):
        code = main(["trace", "--out", str(tmp_path / "tr"),
                     "--data", chain["data"], "--learn-dir", chain["learn"],
                     "--article-id", "no-such-id", "--times", "0.5"])
        assert code == 1
        assert "no-such-id" in capsys.readouterr().err


class TestSweep:
    def test_interval_axis_writes_all_formats(self, chain, tmp_path):
        out = tmp_path / "sw"
        code = main(["sweep", "--out", str(out), "--axis", "interval",
                     "--data", chain["data"], "--config", chain["config"],
                     "--seeds", "0", "--intervals", "yearly,seasonal"])
        assert code == 0
        for ext in ("json", "txt", "csv"):
            assert os.path.exists(out / f"sweep.{ext}")
        payload = json.loads(read(out / "sweep.json"))
        assert payload["axis"] == "interval"
        assert len(payload["points"]) >= 2


class TestPretrainChain:
    def test_pt_variant_consumes_a_pretrained_checkpoint(self, chain, tmp_path):
        corpus, pre = tmp_path / "corpus", tmp_path / "pre"
        assert main(["gen-dynamics", "--out", str(corpus),
                     "--config", chain["config"], "--n-traj", "4",
                     "--grid-len", "6", "--seed", "1"]) == 0
        assert main(["pretrain-dynamics", "--out", str(pre),
                     "--config", chain["config"],
                     "--corpus", str(corpus / "corpus.ckpt"),
                     "--epochs", "1", "--pt-batch", "2"]) == 0
        learn2 = tmp_path / "learn_pt"
        assert main(["learn", "--out", str(learn2), "--data", chain["data"],
                     "--warmup-dir", chain["warm"], "--config", chain["config"],
                     "--variant", "pt",
                     "--pretrained", str(pre / "pt.ckpt")]) == 0
        manifest = json.loads(read(learn2 / "manifest.json"))
        assert manifest["inputs"]["pretrained"] == str(pre / "pt.ckpt")
        assert os.path.exists(learn2 / "tsm.ckpt")
