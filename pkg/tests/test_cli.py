import csv
import json

import pytest

from decoupling.cli import main
from decoupling.corpus import fixtures_dir

FAST = ["--delta-levels", "8", "--multistarts", "8", "--grid-density", "9"]


def fam(name):
    return str(fixtures_dir() / name)


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_eval_writes_json(tmp_path, capsys):
    code, out, _ = run(["eval", "--family", fam("abs-shift-pair.fam"), "--at", "0.5;2", "--out", str(tmp_path)], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "eval.json").read_text())
    assert rep == json.loads(out)
    assert rep["tool"] == "decoupling"
    assert rep["results"]["sum"] == pytest.approx([1.0, 3.0])
    assert not (tmp_path / "eval.csv").exists()


def test_env_out_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DECOUPLING_OUT", str(tmp_path / "r"))
    code, _, _ = run(["sum", "--family", fam("geometric-abs.fam"), "--at", "2"], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "r" / "sum.json").read_text())
    assert rep["results"]["upper_sum"][0]["value"] == pytest.approx(4.0, abs=1e-6)


def test_no_write(tmp_path, capsys):
    code, out, _ = run(["eval", "--family", fam("constant.fam"), "--at", "0", "--out", str(tmp_path), "--no-write"], capsys)
    assert code == 0 and json.loads(out)["results"]["sum"] == [2.5]
    assert list(tmp_path.iterdir()) == []


def test_lambda_csv_trace(tmp_path, capsys):
    code, out, _ = run(["lambda", "--family", fam("abs-shift-pair.fam"), *FAST, "--out", str(tmp_path)], capsys)
    assert code == 0
    assert json.loads(out)["results"]["estimate"]["value"] == pytest.approx(1.0, abs=1e-3)
    with open(tmp_path / "lambda.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["quantity", "s_size", "delta", "value"]
    assert len(rows) > 8


def test_strict_fails_exit_one(tmp_path, capsys):
    argv = ["certify", "uniform", "--family", fam("reciprocal-pair.fam"), *FAST, "--out", str(tmp_path)]
    assert run(argv, capsys)[0] == 0
    code, out, _ = run(argv + ["--strict"], capsys)
    assert code == 1
    assert json.loads(out)["results"]["certificate"]["verdict"] == "Fails"
    assert (tmp_path / "certify-uniform.json").exists()


def test_dsl_error_exit_two(tmp_path, capsys):
    bad = tmp_path / "bad.fam"
    bad.write_text("name := bad\ndim := 1\nt1 := (abs 0\n")
    code, _, err = run(["eval", "--family", str(bad), "--at", "0", "--no-write"], capsys)
    assert code == 2
    assert err.startswith("decoupling: 3:")


def test_usage_errors_exit_two(tmp_path, capsys):
    assert run(["eval", "--family", str(tmp_path / "missing.fam"), "--at", "0", "--no-write"], capsys)[0] == 2
    assert run(["frobnicate"], capsys)[0] == 2
    assert run(["certify", "joint", "--family", fam("abs-pair.fam"), "--no-write"], capsys)[0] == 2


def test_corpus_entry_deterministic(tmp_path, capsys):
    reps = []
    for _ in range(2):
        code, out, _ = run(["corpus", "--entry", "abs-twin", "--seed", "7", "--workers", "1", "--no-write"], capsys)
        assert code == 0
        rep = json.loads(out)
        rep.pop("timestamp")
        reps.append(rep)
    assert reps[0] == reps[1]
