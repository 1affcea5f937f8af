from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import random_entity_sets, reference_metrics
from slotner.data import SynthSpec, synth_generate
from slotner.matching import UNTYPED, Entity
from slotner.model import ModelConfig, PredictionSet
from slotner.training import (EvalReport, Trainer, TrainConfig, assign, build_vocab, evaluate, fit, init_model,
                              lr_at, make_instances, predict_instances, run_experiment, run_sweep, score,
                              warmup_locate_train)


def small_setup(size=40, seed=0, m=6, **mkw):
    corpus = synth_generate(SynthSpec(size=size, seed=seed, max_len=12, max_entities=m))
    mcfg = ModelConfig(vocab_size=0, num_types=3, hidden=16, layers=1, heads=2, interaction_layers=1, num_prompts=m,
                       **mkw)
    vocab = build_vocab(corpus, mcfg)
    mcfg = replace(mcfg, vocab_size=len(vocab))
    return corpus, vocab, mcfg


# --- schedule -------------------------------------------------------------------

def test_lr_schedule_exact():
    assert lr_at(0, 100, 1e-3, 0.1) == 0.0
    assert lr_at(5, 100, 1e-3, 0.1) == pytest.approx(5e-4)
    assert lr_at(10, 100, 1e-3, 0.1) == 1e-3
    assert lr_at(55, 100, 1e-3, 0.1) == pytest.approx(5e-4)
    assert lr_at(100, 100, 1e-3, 0.1) == 0.0
    assert lr_at(0, 10, 1e-3, 0.0) == 1e-3


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(warmup=1.0)
    with pytest.raises(ValueError):
        TrainConfig(mode="other")
    with pytest.raises(ValueError):
        TrainConfig(matching="greedy")


# --- training -------------------------------------------------------------------

def test_zero_lr_leaves_params_unchanged():
    corpus, vocab, mcfg = small_setup()
    model = init_model(mcfg, 0)
    before = [p.detach().clone() for p in model.parameters()]
    trainer = Trainer(model, TrainConfig(lr=0.0), total_steps=5)
    trainer.train_step(make_instances(corpus, vocab, mcfg)[:8])
    assert all(torch.equal(a, b) for a, b in zip(before, model.parameters()))


def test_same_seed_same_trajectory():
    corpus, vocab, mcfg = small_setup()
    inst = make_instances(corpus, vocab, mcfg)
    runs = []
    for _ in range(2):
        model = init_model(mcfg, 3)
        runs.append([r["L"] for r in fit(model, inst, TrainConfig(epochs=2, batch_size=8, seed=3))])
    assert runs[0] == runs[1]


def test_toy_batch_loss_decreases():
    corpus, vocab, mcfg = small_setup(size=8)
    model = init_model(mcfg, 0)
    inst = make_instances(corpus, vocab, mcfg)
    trainer = Trainer(model, TrainConfig(lr=1e-3, warmup=0.0), total_steps=200)
    losses = [trainer.train_step(inst)["L"] for _ in range(200)]
    assert np.mean(losses[-10:]) < 0.5 * np.mean(losses[:10])


def test_locate_only_freezes_encoder_and_classifier():
    corpus, vocab, mcfg = small_setup()
    model = init_model(mcfg, 0)
    frozen = [p.detach().clone() for p in model.encoder_parameters()] + \
        [p.detach().clone() for p in model.classifier.parameters()]
    history = warmup_locate_train(model, make_instances(corpus.position_only(), vocab, mcfg),
                                  TrainConfig(epochs=1, batch_size=8))
    after = list(model.encoder_parameters()) + list(model.classifier.parameters())
    assert all(torch.equal(a, b) for a, b in zip(frozen, after))
    # the optimized loss is the locating term alone
    assert all(r["L"] == pytest.approx(2.0 * r["L2"]) for r in history)


def test_locate_only_labels_are_untyped_and_deduplicated():
    pred = PredictionSet(torch.zeros(4, 3), torch.zeros(4, 5), torch.zeros(4, 5))
    gold = [Entity(1, 2, 0), Entity(1, 2, 1), Entity(3, 5, 0)]
    labels, sigma = assign(gold, pred, TrainConfig(mode="locate_only"), 4)
    assert {e for e in labels.labels if not e.is_null} == {Entity(1, 2, UNTYPED), Entity(3, 5, UNTYPED)}
    assert sorted(sigma) == [0, 1, 2, 3]


def test_one_to_one_label_count():
    pred = PredictionSet(torch.zeros(5, 3), torch.zeros(5, 5), torch.zeros(5, 5))
    gold = [Entity(1, 2, 0), Entity(3, 5, 1)]
    labels, _ = assign(gold, pred, TrainConfig(label_expansion=False), 5)
    assert labels.non_null == 2
    labels, _ = assign(gold, pred, TrainConfig(), 5)
    assert labels.non_null == 4


def test_static_assignment_is_identity():
    pred = PredictionSet(torch.randn(4, 3), torch.randn(4, 5), torch.randn(4, 5))
    labels, sigma = assign([Entity(4, 5, 0), Entity(1, 1, 1)], pred, TrainConfig(matching="static"), 4)
    assert sigma == [0, 1, 2, 3] and labels.labels[0] == Entity(1, 1, 1)


# --- metrics --------------------------------------------------------------------

def test_identical_predictions_perfect():
    gold = [[Entity(1, 2, 0), Entity(3, 3, 1)], []]
    r = score(gold, gold)
    assert (r.precision, r.recall, r.f1, r.loc_f1, r.typing_accuracy) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_empty_predictions():
    r = score([[Entity(1, 2, 0)]], [[]])
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_wrong_type_located():
    r = score([[Entity(1, 2, 0)]], [[Entity(1, 2, 1)]], ["A", "B"])
    assert r.loc_f1 == 1.0 and r.typing_accuracy == 0.0 and r.f1 == 0.0
    assert r.per_type_f1 == {"A": 0.0, "B": 0.0}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_match_reference(seed):
    gold, pred = random_entity_sets(np.random.default_rng(seed))
    r = score(gold, pred)
    got = (r.precision, r.recall, r.f1, r.loc_precision, r.loc_recall, r.loc_f1, r.typing_accuracy)
    assert got == reference_metrics(gold, pred)
    assert all(0.0 <= v <= 1.0 for v in got)


def test_report_rows_and_dict():
    r = score([[Entity(1, 1, 0)]], [[Entity(1, 1, 0)]], ["PER"])
    assert isinstance(r, EvalReport)
    assert dict(r.rows())["f1[PER]"] == 1.0
    assert r.to_dict()["counts"]["correct"] == 1


def test_too_few_prompts_caps_recall():
    corpus, vocab, mcfg = small_setup(size=30, m=6)
    mcfg = replace(mcfg, num_prompts=1)
    vocab = build_vocab(corpus, mcfg)
    mcfg = replace(mcfg, vocab_size=len(vocab))
    model = init_model(mcfg, 0)
    from slotner.template import TemplateKind, build_input
    seqs = [build_input(r.tokens, 1, TemplateKind(), vocab) for r in corpus]
    preds = predict_instances(model, seqs)
    assert all(len(p) <= 1 for p in preds)
    ceiling = sum(min(1, len(r.entities)) for r in corpus) / sum(len(r.entities) for r in corpus)
    assert ceiling < 1 and score([corpus.gold(r) for r in corpus], preds).recall <= ceiling


def test_single_value_sweep_equals_plain_run():
    corpus, _, mcfg = small_setup(size=24)
    train, test = corpus[:16], corpus[16:]
    cfg = TrainConfig(epochs=1, batch_size=8)
    swept = run_sweep("I", [1], train, test, mcfg, cfg)
    _, _, plain, _ = run_experiment(train, test, mcfg, cfg)
    assert swept[0][1] == plain


def test_evaluate_on_corpus():
    corpus, vocab, mcfg = small_setup(size=10)
    model = init_model(mcfg, 0)
    r = evaluate(model, vocab, corpus)
    assert r.counts["gold"] == sum(len(x.entities) for x in corpus)
