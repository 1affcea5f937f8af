import json
from dataclasses import replace

import pytest
import torch

from slotner.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from slotner.config import ConfigError, build_configs, dump_config, parse_config, split_config
from slotner.data import SynthSpec, synth_generate
from slotner.model import ModelConfig
from slotner.training import build_vocab, init_model, predict_sentences


@pytest.fixture
def trained(tmp_path):
    corpus = synth_generate(SynthSpec(size=20, seed=0, max_len=12, max_entities=4))
    mcfg = ModelConfig(vocab_size=0, num_types=3, hidden=16, layers=1, heads=2, interaction_layers=1, num_prompts=4)
    vocab = build_vocab(corpus, mcfg)
    model = init_model(replace(mcfg, vocab_size=len(vocab)), 0)
    path = tmp_path / "model.bin"
    save_checkpoint(path, model, vocab, corpus.types, {"note": "x"})
    return corpus, model, vocab, path


def test_checkpoint_round_trip(trained):
    corpus, model, vocab, path = trained
    loaded, vocab2, types, extra = load_checkpoint(path)
    assert vocab2 == vocab and types == corpus.types and extra == {"note": "x"}
    assert loaded.config == model.config
    for (n1, a), (n2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert n1 == n2 and torch.equal(a, b)
    sentences = [r.tokens for r in corpus]
    assert predict_sentences(model, vocab, sentences) == predict_sentences(loaded, vocab2, sentences)


def test_checkpoint_resave_is_byte_identical(trained, tmp_path):
    _, _, _, path = trained
    model, vocab, types, extra = load_checkpoint(path)
    again = tmp_path / "again.bin"
    save_checkpoint(again, model, vocab, types, extra)
    assert again.read_bytes() == path.read_bytes()


def test_bad_magic(trained):
    _, _, _, path = trained
    raw = path.read_bytes()
    path.write_bytes(b"other-format" + raw[len(b"slotner-checkpoint"):])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"\x00\x01garbage\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def _rewrite_manifest(path, edit):
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    magic, version, size = raw[:nl].decode().split()
    manifest = json.loads(raw[nl + 1:nl + 1 + int(size)])
    edit(manifest)
    text = json.dumps(manifest).encode()
    path.write_bytes(f"{magic} {version} {len(text)}\n".encode() + text + raw[nl + 1 + int(size):])


def test_shape_mismatch_rejected(trained):
    _, _, _, path = trained

    def edit(m):
        m["config"]["hidden"] = 32
        m["config"]["heads"] = 2
    _rewrite_manifest(path, edit)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_truncated_payload(trained):
    _, _, _, path = trained
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_version_mismatch(trained):
    _, _, _, path = trained
    raw = path.read_bytes()
    path.write_bytes(raw.replace(b"slotner-checkpoint 1 ", b"slotner-checkpoint 9 ", 1))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


# --- config -------------------------------------------------------------------

def test_config_round_trip():
    values = {"hidden": 32, "lr": 0.0005, "template": "hard", "prompt_agnostic": False, "matching": "static"}
    assert parse_config(dump_config(values)) == values


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="hiden"):
        parse_config("hiden = 3\n")


def test_nested_table_rejected():
    with pytest.raises(ConfigError):
        parse_config("[model]\nhidden = 3\n")


def test_malformed_toml():
    with pytest.raises(ConfigError):
        parse_config("hidden = = 3")


def test_ablation_mapping():
    assert split_config({}, "static")[1] == {"matching": "static"}
    assert split_config({}, "one_to_one")[1] == {"label_expansion": False}
    assert split_config({}, "no_mask")[0] == {"prompt_agnostic": False}
    with pytest.raises(ConfigError):
        split_config({}, "bogus")


def test_build_configs_applies_values():
    mcfg, tcfg = build_configs({"hidden": 32, "heads": 4, "lambda2": 1.5}, 100, 3, "static")
    assert (mcfg.hidden, mcfg.vocab_size, mcfg.num_types) == (32, 100, 3)
    assert tcfg.lambda2 == 1.5 and tcfg.matching == "static"


def test_build_configs_reports_invalid_values():
    with pytest.raises(ConfigError):
        build_configs({"mode": "sideways"}, 10, 2)
