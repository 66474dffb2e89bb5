import csv
import io
import json
import subprocess
import sys

import pytest

from addsep.cli import RunConfig, cmd_report, main, parse_methods
from addsep.funcgen import CorpusConfig
from addsep.mlp import TrainConfig, load_model


def write_config(tmp_path, **overrides):
    doc = {
        "corpus": {"arities": [2, 3], "max_functions": 6},
        "train": {"max_epochs": 15},
        "sampling": {"points": 10},
    }
    doc.update(overrides)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def run(*args):
    return main([*args, "-q"])


@pytest.fixture
def trained_run(tmp_path):
    out = tmp_path / "run"
    cfg = write_config(tmp_path)
    assert run("generate", "--config", cfg, "--out", str(out)) == 0
    assert run("train", "--out", str(out)) == 0
    return out


def test_parse_methods():
    assert parse_methods("1,2,5-8") == (1, 2, 5, 6, 7, 8)
    assert parse_methods("3") == (3,)


def test_config_roundtrip():
    cfg = RunConfig(seed=3, methods=(1, 5), corpus=CorpusConfig(arities=(2,), rng_seed=3),
                    train=TrainConfig(max_epochs=7))
    back = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


def test_generate_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    for name in ("a", "b"):
        assert run("generate", "--config", cfg, "--seed", "4", "--out", str(tmp_path / name)) == 0
    for rel in ("manifest.json", "data/f00000.csv", "data/f00005.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    doc = json.loads((tmp_path / "a" / "manifest.json").read_text())
    labels = [e["label"] for e in doc["functions"]]
    assert labels.count("separable") == labels.count("non_separable") == 3
    assert json.loads((tmp_path / "a" / "config.json").read_text())["seed"] == 4


def test_both_arities_present(tmp_path):
    out = tmp_path / "r"
    assert run("generate", "--config", write_config(tmp_path, corpus={"max_functions": 40}), "--out", str(out)) == 0
    doc = json.loads((out / "manifest.json").read_text())
    assert {e["arity"] for e in doc["functions"]} == {2, 3}


def test_train_writes_models_and_log(trained_run):
    with open(trained_run / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert set(rows[0]) == {"function_id", "epochs", "best_val_loss", "status"}
    for r in rows:
        assert r["status"] == "ok"
        load_model(trained_run / "models" / f"{r['function_id']}.json")


def test_train_resumes(trained_run):
    victim = trained_run / "models" / "f00002.json"
    keep = trained_run / "models" / "f00000.json"
    victim.unlink()
    stamp = keep.stat().st_mtime_ns
    assert run("train", "--out", str(trained_run)) == 0
    assert victim.exists()
    assert keep.stat().st_mtime_ns == stamp


def test_evaluate_and_report(trained_run, capsys):
    assert run("evaluate", "--out", str(trained_run), "--methods", "5-8") == 0
    with open(trained_run / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == ["5", "6", "7", "8"]
    assert len({(r["threshold"], r["accuracy"]) for r in rows}) == 1

    assert run("evaluate", "--out", str(trained_run), "--methods", "1-8") == 0
    capsys.readouterr()
    buf = io.StringIO()
    text = cmd_report(trained_run, buf)
    with open(trained_run / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    table = [line.split() for line in text.splitlines()[3:11]]
    assert [float(r[1]) for r in table] == sorted((float(r[1]) for r in table), reverse=True)
    by_method = {r["method"]: r for r in rows}
    for method, acc, threshold in table:
        assert (acc, threshold) == (by_method[method]["accuracy"], by_method[method]["threshold"])
    assert (trained_run / "score_distribution.csv").exists()


def test_oracle_mode(tmp_path):
    out = tmp_path / "o"
    cfg = write_config(tmp_path, corpus={"max_functions": 20})
    assert run("generate", "--config", cfg, "--out", str(out)) == 0
    assert run("evaluate", "--out", str(out), "--oracle") == 0
    with open(out / "oracle" / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8 and all(r["accuracy"] == "1" for r in rows)


def test_missing_models(tmp_path, capsys):
    out = tmp_path / "m"
    assert run("generate", "--config", write_config(tmp_path), "--out", str(out)) == 0
    assert run("evaluate", "--out", str(out)) == 2
    assert "MissingModel" in capsys.readouterr().err
    assert run("evaluate", "--out", str(out), "--partial") == 2  # nothing trained at all


def test_partial_evaluation(trained_run):
    (trained_run / "models" / "f00000.json").unlink()
    assert run("evaluate", "--out", str(trained_run)) == 2
    assert run("evaluate", "--out", str(trained_run), "--partial", "--methods", "1") == 0


def test_report_without_evaluation(tmp_path, capsys):
    assert run("report", "--out", str(tmp_path)) == 2
    assert "run `addsep evaluate" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert run("evaluate", "--out", str(tmp_path), "--methods", "0,9") == 1
    assert run("generate", "--config", str(tmp_path / "nope.json")) == 1
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "addsep", "report", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2 and "IncompleteRun" in proc.stderr
