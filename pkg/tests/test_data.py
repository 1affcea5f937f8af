import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_stats
from slotner.data import (Corpus, CorpusFormatError, CorpusRecord, Span, SynthSpec, corpus_stats, dump_corpus,
                          load_corpus, read_corpus, save_corpus, synth_generate)
from slotner.matching import UNTYPED, Entity

HEADER = '{"types": ["PER", "LOC"]}\n'


# --- parsing ------------------------------------------------------------------

def test_end_past_sentence_names_line():
    text = HEADER + '{"tokens": ["a", "b"], "entities": []}\n' + \
        '{"tokens": ["a", "b"], "entities": [{"start": 1, "end": 3, "type": "PER"}]}\n'
    with pytest.raises(CorpusFormatError) as err:
        read_corpus(text.splitlines())
    assert err.value.line == 3 and "line 3" in str(err.value)


@pytest.mark.parametrize("line", [
    '{"tokens": ["a"], "entities": [{"start": 1, "end": 1, "type": "PER"}, {"start": 1, "end": 1, "type": "PER"}]}',
    '{"tokens": ["a"], "entities": [{"start": 1, "end": 1, "type": "ORG"}]}',
    '{"tokens": ["a"], "entities": [{"start": 0, "end": 1}]}',
    '{"tokens": "a b"}',
    '{"tokens": ["a"]',
])
def test_bad_records_rejected(line):
    with pytest.raises(CorpusFormatError, match="line 2"):
        read_corpus([HEADER, line])


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    corpus = load_corpus(path)
    assert len(corpus) == 0
    assert all(v == 0 for _, v in corpus_stats(corpus).rows())


def test_nested_and_duplicate_span_with_two_types_allowed():
    line = '{"tokens": ["a", "b", "c"], "entities": [{"start": 1, "end": 3, "type": "PER"}, ' \
           '{"start": 2, "end": 2, "type": "LOC"}, {"start": 2, "end": 2, "type": "PER"}]}'
    corpus = read_corpus([HEADER, line])
    assert corpus.gold(corpus[0]) == [Entity(1, 3, 0), Entity(2, 2, 0), Entity(2, 2, 1)]


def test_position_only_entities():
    corpus = read_corpus([HEADER, '{"tokens": ["a", "b"], "entities": [{"start": 1, "end": 2}]}'])
    assert corpus.gold(corpus[0]) == [Entity(1, 2, UNTYPED)]


def test_round_trip(tmp_path):
    corpus = synth_generate(SynthSpec(size=50, seed=4))
    corpus.records.append(CorpusRecord(["x", "y"], [Span(1, 2)], "untyped"))
    path = tmp_path / "c.jsonl"
    save_corpus(corpus, path)
    again = load_corpus(path)
    assert again == corpus
    assert dump_corpus(again) == path.read_text()


def test_position_only_drops_types_and_merges_spans():
    corpus = Corpus(["A", "B"], [CorpusRecord(["a", "b"], [Span(1, 2, "A"), Span(1, 2, "B"), Span(2, 2, "A")])])
    assert corpus.position_only()[0].entities == [Span(1, 2), Span(2, 2)]


# --- synthetic corpora -----------------------------------------------------------

def test_same_seed_same_corpus():
    spec = SynthSpec(size=100, seed=7)
    assert synth_generate(spec) == synth_generate(spec)
    assert synth_generate(spec) != synth_generate(SynthSpec(size=100, seed=8))


def test_no_nesting_probability_no_nested_entities():
    stats = corpus_stats(synth_generate(SynthSpec(size=300, nesting=0.0, seed=1)))
    assert stats.nested_entities == 0 and stats.nesting_rate == 0.0


def test_generated_ranges_over_thousand_sentences():
    spec = SynthSpec(size=1000, min_len=6, max_len=20, max_entities=5, seed=2)
    corpus = synth_generate(spec)
    assert len(corpus) == 1000
    for r in corpus:
        assert spec.min_len <= len(r.tokens) <= spec.max_len
        assert len(r.entities) <= spec.max_entities
        r.validate(corpus.types)
    stats = corpus_stats(corpus)
    assert stats.nested_entities > 0 and stats.max_entities <= 5


def test_density_raises_entity_count():
    sparse = corpus_stats(synth_generate(SynthSpec(size=500, density=0.1, seed=0)))
    dense = corpus_stats(synth_generate(SynthSpec(size=500, density=0.9, seed=0)))
    assert sparse.avg_entities < dense.avg_entities


def test_trigger_words_mark_types():
    corpus = synth_generate(SynthSpec(size=200, seed=3))
    for r in corpus:
        for e in r.entities:
            assert r.tokens[e.start - 1].startswith(e.type.lower() + "_b")
            assert r.tokens[e.end - 1].startswith(e.type.lower() + "_e")


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(min_len=5, max_len=4)
    with pytest.raises(ValueError):
        SynthSpec(nesting=1.5)


# --- statistics ---------------------------------------------------------------

def test_containment_example():
    rec = CorpusRecord(list("abcd"), [Span(1, 3, "A"), Span(2, 2, "B")])
    stats = corpus_stats([rec])
    assert (stats.nested_entities, stats.nested_sentences, stats.nesting_rate) == (2, 1, 100.0)


def test_identical_spans_are_not_nested():
    stats = corpus_stats([CorpusRecord(list("ab"), [Span(1, 2, "A"), Span(1, 2, "B")])])
    assert stats.entities == 2 and stats.nested_entities == 0


def test_no_entities_and_flat():
    assert corpus_stats([CorpusRecord(["a"])]).nesting_rate == 0.0
    assert corpus_stats([CorpusRecord(["a"])]).avg_entities == 0.0
    flat = corpus_stats([CorpusRecord(["a", "b"], [Span(1, 1, "A")]), CorpusRecord(["c"], [Span(1, 1, "A")])])
    assert flat.nesting_rate == 0.0 and flat.avg_entities == 1.0 and flat.avg_length == 1.5


def test_stats_has_eight_fields():
    labels = [k for k, _ in corpus_stats([]).rows()]
    assert labels == ["#S", "#NS", "#E", "#NE", "NR", "AL", "#ME", "#AE"]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stats_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    records = []
    for _ in range(int(rng.integers(1, 6))):
        n = int(rng.integers(1, 8))
        pairs = {(int(a), int(b)) for a, b in (sorted(rng.integers(1, n + 1, 2)) for _ in range(rng.integers(0, 5)))}
        spans = [Span(a, b, "A") for a, b in sorted(pairs)]
        records.append(CorpusRecord(["w"] * n, spans))
    stats = corpus_stats(records)
    ns, e, ne = brute_stats(records)
    assert (stats.nested_sentences, stats.entities, stats.nested_entities) == (ns, e, ne)
    assert stats.nested_sentences <= stats.sentences and stats.nested_entities <= stats.entities
    assert stats.nesting_rate == (100.0 * ne / e if e else 0.0)
