"""Corpus records, the line-delimited corpus format, synthetic corpora and statistics.

Corpus files are UTF-8 JSON lines. The first line declares the type
inventory, each following line is one sentence::

    {"types": ["PER", "LOC"]}
    {"id": "s1", "tokens": ["Jobs", "was", "born"], "entities": [{"start": 1, "end": 1, "type": "PER"}]}

``start``/``end`` are 1-based inclusive word indices. An entity without a
``type`` (or with ``null``) is a position-only annotation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .matching import UNTYPED, Entity


class CorpusFormatError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    type: str | None = None


@dataclass
class CorpusRecord:
    tokens: list[str]
    entities: list[Span] = field(default_factory=list)
    id: str | None = None

    def validate(self, types: Sequence[str] | None = None) -> None:
        seen = set()
        for e in self.entities:
            if not (1 <= e.start <= e.end <= len(self.tokens)):
                raise ValueError(f"entity ({e.start}, {e.end}) outside 1..{len(self.tokens)}")
            if types is not None and e.type is not None and e.type not in types:
                raise ValueError(f"entity type {e.type!r} not in inventory {list(types)}")
            key = (e.start, e.end, e.type)
            if key in seen:
                raise ValueError(f"duplicate entity {key}")
            seen.add(key)

    def to_json(self) -> dict:
        d: dict = {}
        if self.id is not None:
            d["id"] = self.id
        d["tokens"] = list(self.tokens)
        d["entities"] = [{"start": e.start, "end": e.end, "type": e.type} for e in self.entities]
        return d


@dataclass
class Corpus:
    types: list[str]
    records: list[CorpusRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CorpusRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Corpus(list(self.types), self.records[i])
        return self.records[i]

    def type_id(self, name: str | None) -> int:
        return UNTYPED if name is None else self.types.index(name)

    def gold(self, record: CorpusRecord) -> list[Entity]:
        return sorted(Entity(e.start, e.end, self.type_id(e.type)) for e in record.entities)

    def words(self) -> list[str]:
        seen: dict[str, None] = {}
        for r in self.records:
            for w in r.tokens:
                seen.setdefault(w, None)
        return list(seen)

    @property
    def max_entities(self) -> int:
        return max((len(r.entities) for r in self.records), default=0)

    def position_only(self) -> "Corpus":
        recs = [CorpusRecord(list(r.tokens), [Span(e.start, e.end) for e in
                                                {(e.start, e.end): e for e in r.entities}.values()], r.id)
                for r in self.records]
        return Corpus(list(self.types), recs)


def parse_record(obj: dict, types: Sequence[str] | None = None) -> CorpusRecord:
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ValueError("'tokens' must be a list of strings")
    spans = []
    for e in obj.get("entities", []):
        start, end = e["start"], e["end"]
        if not isinstance(start, int) or not isinstance(end, int):
            raise ValueError("entity start/end must be integers")
        spans.append(Span(start, end, e.get("type")))
    rec = CorpusRecord(list(tokens), spans, obj.get("id"))
    rec.validate(types)
    return rec


def read_corpus(lines: Iterable[str]) -> Corpus:
    types: list[str] | None = None
    records: list[CorpusRecord] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(lineno, f"malformed JSON: {exc.msg}") from None
        if not isinstance(obj, dict):
            raise CorpusFormatError(lineno, "expected a JSON object")
        if types is None and "types" in obj and "tokens" not in obj:
            types = list(obj["types"])
            continue
        try:
            records.append(parse_record(obj, types))
        except (KeyError, ValueError, TypeError) as exc:
            raise CorpusFormatError(lineno, str(exc)) from None
    if types is None:
        inferred = sorted({e.type for r in records for e in r.entities if e.type is not None})
        types = inferred
    return Corpus(types, records)


def load_corpus(path: str | Path) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return read_corpus(fh)


def dump_corpus(corpus: Corpus) -> str:
    lines = [json.dumps({"types": corpus.types}, ensure_ascii=False)]
    lines += [json.dumps(r.to_json(), ensure_ascii=False) for r in corpus.records]
    return "\n".join(lines) + "\n"


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_text(dump_corpus(corpus), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic corpora


@dataclass
class SynthSpec:
    num_types: int = 3
    vocab_size: int = 200
    min_len: int = 8
    max_len: int = 24
    density: float = 0.5
    nesting: float = 0.3
    max_entities: int = 10
    seed: int = 0
    size: int = 1000

    def __post_init__(self) -> None:
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 0.0 <= self.density <= 1.0 or not 0.0 <= self.nesting <= 1.0:
            raise ValueError("density and nesting are probabilities")


TYPE_NAMES = ("PER", "LOC", "ORG", "MISC", "DATE", "EVENT", "WORK", "PRODUCT")


def synth_types(c: int) -> list[str]:
    return [TYPE_NAMES[i] if i < len(TYPE_NAMES) else f"T{i}" for i in range(c)]


def synth_generate(spec: SynthSpec) -> Corpus:
    """Sentences whose entities open and close with type-specific trigger words.

    An entity of type ``c`` reads ``open_c body... close_c``; with probability
    ``spec.nesting`` its body holds another entity. Filler words never occur
    inside entities.
    """
    rng = np.random.default_rng(spec.seed)
    types = synth_types(spec.num_types)
    filler = [f"w{i}" for i in range(spec.vocab_size)]
    body = [f"n{i}" for i in range(max(8, spec.vocab_size // 4))]
    opens = [[f"{t.lower()}_b{j}" for j in range(3)] for t in types]
    closes = [[f"{t.lower()}_e{j}" for j in range(3)] for t in types]

    def entity(budget: int, depth: int) -> tuple[list[str], list[tuple[int, int, int]]]:
        c = int(rng.integers(spec.num_types))
        inner_tokens: list[str] = []
        inner_ents: list[tuple[int, int, int]] = []
        if depth == 0 and budget > 1 and rng.random() < spec.nesting:
            inner_tokens, inner_ents = entity(budget - 1, depth + 1)
        pre = [body[int(rng.integers(len(body)))] for _ in range(int(rng.integers(0, 2)))]
        post = [body[int(rng.integers(len(body)))] for _ in range(int(rng.integers(0, 2)))]
        if not inner_tokens and not pre and not post:
            pre = [body[int(rng.integers(len(body)))]]
        tokens = [opens[c][int(rng.integers(3))], *pre, *inner_tokens, *post, closes[c][int(rng.integers(3))]]
        offset = 1 + len(pre)
        ents = [(s + offset, e + offset, t) for s, e, t in inner_ents]
        ents.append((0, len(tokens) - 1, c))
        return tokens, ents

    records = []
    for idx in range(spec.size):
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
        slots = max(1, length // 4)
        n_top = int(rng.binomial(slots, spec.density))
        pieces: list[tuple[list[str], list[tuple[int, int, int]]]] = []
        used, count = 0, 0
        for _ in range(n_top):
            budget = spec.max_entities - count
            if budget < 1:
                break
            toks, ents = entity(budget, 0)
            if used + len(toks) > length:
                break
            pieces.append((toks, ents))
            used += len(toks)
            count += len(ents)
        n_filler = length - used
        # distribute filler words into the gaps around the entity pieces
        cuts = np.sort(rng.integers(0, n_filler + 1, size=len(pieces)))
        tokens: list[str] = []
        spans: list[Span] = []
        prev = 0
        for (toks, ents), cut in zip(pieces, cuts):
            tokens += [filler[int(rng.integers(len(filler)))] for _ in range(int(cut) - prev)]
            prev = int(cut)
            base = len(tokens) + 1
            spans += [Span(base + s, base + e, types[t]) for s, e, t in ents]
            tokens += toks
        tokens += [filler[int(rng.integers(len(filler)))] for _ in range(n_filler - prev)]
        spans.sort(key=lambda s: (s.start, s.end))
        records.append(CorpusRecord(tokens, spans, f"synth-{spec.seed}-{idx}"))
    return Corpus(types, records)


# ---------------------------------------------------------------------------
# statistics


@dataclass
class CorpusStats:
    sentences: int
    nested_sentences: int
    entities: int
    nested_entities: int
    nesting_rate: float
    avg_length: float
    max_entities: int
    avg_entities: float

    LABELS = ("#S", "#NS", "#E", "#NE", "NR", "AL", "#ME", "#AE")

    def rows(self) -> list[tuple[str, float]]:
        vals = (self.sentences, self.nested_sentences, self.entities, self.nested_entities,
                self.nesting_rate, self.avg_length, self.max_entities, self.avg_entities)
        return list(zip(self.LABELS, vals))


def nested_flags(spans: Sequence[tuple[int, int]]) -> list[bool]:
    """For each span, whether it properly contains or is properly contained in another."""
    flags = [False] * len(spans)
    for i, (a, b) in enumerate(spans):
        for j, (c, d) in enumerate(spans):
            if i != j and (a, b) != (c, d) and ((a <= c and d <= b) or (c <= a and b <= d)):
                flags[i] = True
                break
    return flags


def corpus_stats(corpus: Corpus | Sequence[CorpusRecord]) -> CorpusStats:
    records = corpus.records if isinstance(corpus, Corpus) else list(corpus)
    n_s = len(records)
    n_e = n_ne = n_ns = 0
    total_len = 0
    max_e = 0
    for r in records:
        flags = nested_flags([(e.start, e.end) for e in r.entities])
        n_e += len(flags)
        n_ne += sum(flags)
        n_ns += any(flags)
        total_len += len(r.tokens)
        max_e = max(max_e, len(r.entities))
    return CorpusStats(
        sentences=n_s,
        nested_sentences=n_ns,
        entities=n_e,
        nested_entities=n_ne,
        nesting_rate=100.0 * n_ne / n_e if n_e else 0.0,
        avg_length=total_len / n_s if n_s else 0.0,
        max_entities=max_e,
        avg_entities=n_e / n_s if n_s else 0.0,
    )


def split(corpus: Corpus, n_train: int) -> tuple[Corpus, Corpus]:
    return corpus[:n_train], corpus[n_train:]

