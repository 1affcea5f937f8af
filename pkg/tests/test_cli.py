import json
import subprocess
import sys

import pytest

from slotner.cli import main
from slotner.data import load_corpus

TINY = ["hidden = 16", "layers = 1", "heads = 2", "interaction_layers = 1", "num_prompts = 6",
        "epochs = 2", "batch_size = 8"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(d / "train.jsonl"), "--size", "40", "--max-len", "12",
                 "--max-entities", "6", "--seed", "0"]) == 0
    assert main(["synth", "--out", str(d / "test.jsonl"), "--size", "10", "--max-len", "12",
                 "--max-entities", "6", "--seed", "1"]) == 0
    (d / "tiny.toml").write_text("\n".join(TINY) + "\n")
    return d


def train(d, out, *extra):
    return main(["train", "--data", str(d / "train.jsonl"), "--config", str(d / "tiny.toml"),
                 "--out", str(out), "--seed", "0", *extra])


def test_stats_prints_eight_fields(corpus_dir, capsys):
    assert main(["stats", "--data", str(corpus_dir / "train.jsonl")]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "field\tvalue"
    assert [r.split("\t")[0] for r in rows[1:]] == ["#S", "#NS", "#E", "#NE", "NR", "AL", "#ME", "#AE"]
    assert rows[1] == "#S\t40"


def test_eval_gold_as_predictions(corpus_dir, capsys, tmp_path):
    gold = str(corpus_dir / "test.jsonl")
    assert main(["eval", "--data", gold, "--predictions", gold, "--out", str(tmp_path)]) == 0
    table = dict(line.split("\t") for line in capsys.readouterr().out.strip().splitlines()[1:])
    assert float(table["f1"]) == 1.0
    assert json.loads((tmp_path / "report.json").read_text())["f1"] == 1.0
    assert (tmp_path / "report.png").stat().st_size > 0


def test_train_then_predict(corpus_dir, tmp_path, capsys):
    out = tmp_path / "run"
    assert train(corpus_dir, out, "--test", str(corpus_dir / "test.jsonl")) == 0
    for name in ("metrics.jsonl", "config.toml", "checkpoint.bin", "loss.png", "report.tsv", "report.png"):
        assert (out / name).exists(), name
    assert "f1\t" in capsys.readouterr().out
    sentences = tmp_path / "sentences.txt"
    sentences.write_text("Jobs was born in San Francisco\n")
    pred = tmp_path / "pred.jsonl"
    assert main(["predict", "--model", str(out / "checkpoint.bin"), "--data", str(sentences), "--out", str(pred)]) == 0
    corpus = load_corpus(pred)
    assert len(corpus) == 1 and corpus[0].tokens == "Jobs was born in San Francisco".split()
    for e in corpus[0].entities:
        assert 1 <= e.start <= e.end <= 6 and e.type in corpus.types
    assert main(["eval", "--data", str(corpus_dir / "test.jsonl"), "--model", str(out / "checkpoint.bin")]) == 0


def test_same_seed_identical_artifacts(corpus_dir, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert train(corpus_dir, a) == 0 and train(corpus_dir, b) == 0
    for name in ("metrics.jsonl", "checkpoint.bin", "config.toml"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_ablation_recorded_in_config(corpus_dir, tmp_path):
    assert train(corpus_dir, tmp_path, "--ablation", "static") == 0
    assert 'matching = "static"' in (tmp_path / "config.toml").read_text()


def test_bad_corpus_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"types": ["A"]}\n{"tokens": ["a"], "entities": [{"start": 1, "end": 2, "type": "A"}]}\n')
    assert main(["stats", "--data", str(bad)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_unknown_flag_and_command():
    with pytest.raises(SystemExit) as err:
        main(["stats", "--nope"])
    assert err.value.code != 0
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code != 0


def test_console_entry_point_usage():
    proc = subprocess.run([sys.executable, "-m", "slotner.cli", "--bogus"], capture_output=True, text=True)
    assert proc.returncode != 0 and "usage" in proc.stderr


def test_gradcheck_table(tmp_path, capsys):
    assert main(["gradcheck", "--seeds", "1", "--out", str(tmp_path)]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "case\tmax_rel_error\ttolerance\tstatus"
    cases = {r.split("\t")[0]: r.split("\t")[3] for r in rows[1:]}
    assert cases["model/seed0/64"] == "pass"
    assert all(v == "pass" for k, v in cases.items() if k.startswith("op/"))
    assert (tmp_path / "gradcheck.tsv").exists()


def test_sweep_writes_table_and_figure(corpus_dir, tmp_path, capsys):
    assert main(["sweep", "--data", str(corpus_dir / "train.jsonl"), "--test", str(corpus_dir / "test.jsonl"),
                 "--config", str(corpus_dir / "tiny.toml"), "--axis", "I", "--values", "0,1",
                 "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("I\tf1") and [l.split("\t")[0] for l in lines[1:]] == ["0", "1"]
    assert (tmp_path / "sweep_I.png").exists()
