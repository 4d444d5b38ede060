import csv
import hashlib
import json

import pytest

from afibshift.cli import load_run_config, main
from afibshift.errors import ValidationError

TINY = {
    "seed": 3,
    "arch": {"input_length": 100,
             "conv_layers": [{"channels": 4, "kernel_size": 5, "pool_after": True, "pool_window": 5},
                             {"channels": 4, "kernel_size": 5}],
             "dense_layers": [{"units": 8}, {"units": 4}]},
    "hyperparams": {"learning_rate": 0.05, "batch_size": 16, "max_epochs": 4, "patience": 2},
    "prune": {"sparsity_steps": [0.5, 0.9], "fine_tune": {"max_epochs": 2, "patience": 1, "batch_size": 16}},
    "quant": {"b": 3, "qat": {"max_epochs": 2, "patience": 1, "batch_size": 16}, "sweep_bits": [2, 3]},
    "synth": {"n_per_class": 8, "length_range": [80, 140]},
}


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _tree_digest(d):
    return {p.name: _digest(p) for p in sorted(d.iterdir())}


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(TINY))
    return p


def run(*args):
    return main([str(a) for a in args])


def test_synth_is_byte_identical(tmp_path, cfg):
    assert run("synth", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("synth", "--config", cfg, "--out", tmp_path / "b") == 0
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    assert run("synth", "--config", cfg, "--seed", 4, "--out", tmp_path / "c") == 0
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "c")


def test_full_pipeline(tmp_path, cfg, capsys):
    t = tmp_path
    steps = [
        ("synth", "--out", t / "data"),
        ("preprocess", "--in", t / "data", "--out", t / "prep.npz"),
        ("train", "--in", t / "prep.npz", "--out", t / "base.npz"),
        ("prune", "--in", t / "base.npz", "--data", t / "prep.npz", "--out", t / "pruned.npz"),
        ("quantize", "--in", t / "pruned.npz", "--data", t / "prep.npz", "--out", t / "q.npz"),
        ("pack", "--in", t / "q.npz", "--out", t / "m.sqnz"),
        ("eval", "--in", t / "base.npz", "--data", t / "prep.npz", "--out", t / "baseline.json"),
        ("eval", "--in", t / "m.sqnz", "--data", t / "prep.npz", "--out", t / "optimised.json"),
        ("eval", "--in", t / "q.npz", "--data", t / "prep.npz", "--out", t / "inmem.json"),
        ("report", "--in", t / "baseline.json", t / "optimised.json", "--out", t / "summary.csv"),
    ]
    for cmd, *rest in steps:
        assert run(cmd, "--config", cfg, *rest) == 0, cmd
    for side in ("prep.padding.csv", "base.history.csv", "pruned.prune.csv", "q.sweep.csv", "m.size.json"):
        assert (t / side).exists(), side

    packed = json.loads((t / "optimised.json").read_text())
    inmem = json.loads((t / "inmem.json").read_text())
    assert packed["confusion_matrix"] == inmem["confusion_matrix"]

    rows = list(csv.DictReader(open(t / "summary.csv")))
    assert [r["model"] for r in rows] == ["baseline", "optimised"]
    for r in rows:
        for k in ("accuracy", "precision", "sensitivity", "specificity", "f1", "model_bytes"):
            assert r[k] != ""
    assert float(rows[1]["compression_ratio"]) > 1

    # rerunning a stage reproduces its artifact exactly and leaves inputs untouched
    before = _digest(t / "prep.npz")
    assert run("train", "--config", cfg, "--in", t / "prep.npz", "--out", t / "base2.npz") == 0
    assert _digest(t / "base.npz") == _digest(t / "base2.npz")
    assert _digest(t / "prep.npz") == before

    capsys.readouterr()
    rec = sorted((t / "data").glob("SA*.csv"))[0]
    assert run("infer", "--model", t / "m.sqnz", "--in", rec) == 0
    line = capsys.readouterr().out.strip()
    parts = line.split(",")
    assert parts[0] in ("N", "A", "O", "~") and len(parts) == 5
    assert abs(sum(map(float, parts[1:])) - 1) < 1e-5


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_unknown_config_key_exits_1(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**TINY, "learning_rate": 0.1}))
    assert run("synth", "--config", p, "--out", tmp_path / "d") == 1
    e = _err(capsys)
    assert e["exit"] == 1 and e["error"] == "ValidationError" and "learning_rate" in e["message"]
    assert not (tmp_path / "d").exists()


def test_nested_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**TINY, "quant": {"bits": 3}}))
    with pytest.raises(ValidationError, match="bits"):
        load_run_config(p)


def test_missing_input_and_bad_flags_exit_1(tmp_path, cfg, capsys):
    assert run("train", "--config", cfg, "--in", tmp_path / "nope.npz", "--out", tmp_path / "m.npz") == 1
    assert _err(capsys)["command"] == "train"
    assert run("train", "--config", cfg) == 1
    assert run("bogus") == 1


def test_bad_packed_file_exits_1(tmp_path, capsys):
    (tmp_path / "m.sqnz").write_bytes(b"SQNX\x01")
    (tmp_path / "s.csv").write_text("1\n2\n3\n")
    assert run("infer", "--model", tmp_path / "m.sqnz", "--in", tmp_path / "s.csv") == 1
    assert _err(capsys)["error"] == "BadMagicError"


def test_numeric_failure_exits_2(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({**TINY, "hyperparams": {"learning_rate": 1e30, "batch_size": 4,
                                                     "max_epochs": 3, "patience": 1}}))
    assert run("synth", "--config", p, "--out", tmp_path / "data") == 0
    assert run("preprocess", "--config", p, "--in", tmp_path / "data", "--out", tmp_path / "prep.npz") == 0
    assert run("train", "--config", p, "--in", tmp_path / "prep.npz", "--out", tmp_path / "m.npz") == 2
    assert _err(capsys)["error"] == "NumericError"
