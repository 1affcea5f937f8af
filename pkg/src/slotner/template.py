"""Dual-slot multi-prompt input layout and the prompt-agnostic mask.

A prompted sequence is ``M`` prompts, then ``[CLS]``, then the sentence::

    [P1] [T1] [P2] [T2] ... [PM] [TM] [CLS] w1 ... wN         (default)
    [P1] is a [T1] entity ... [CLS] w1 ... wN                 (hard)
    [P1] <s> [T1] ... [CLS] w1 ... wN                         (soft)

``k`` is the number of tokens before ``[CLS]``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch

from .core import AttentionMask

PAD, UNK, CLS = "[PAD]", "[UNK]", "[CLS]"
HARD_CONTEXT = ("is", "a", "entity")
VARIANTS = ("default", "hard", "soft")


class SequenceTooLong(ValueError):
    def __init__(self, length: int, max_len: int):
        self.length = length
        self.max_len = max_len
        super().__init__(f"prompted sequence has {length} tokens, encoder maximum is {max_len}")


@dataclass(frozen=True)
class TemplateKind:
    variant: str = "default"
    soft_tokens: int = 1

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown template {self.variant!r}; expected one of {VARIANTS}")
        if self.variant == "soft" and self.soft_tokens < 1:
            raise ValueError("soft template needs at least one context token")

    @property
    def prompt_length(self) -> int:
        if self.variant == "hard":
            return 2 + len(HARD_CONTEXT)
        if self.variant == "soft":
            return 2 + self.soft_tokens
        return 2


class Vocab:
    """Word ids plus reserved ids for padding, unknown, [CLS], slots and <s>.

    Reserved layout: 0 pad, 1 unk, 2 [CLS], then ``M`` position slots,
    ``M`` type slots, ``soft_tokens`` context tokens, then words.
    """

    def __init__(self, words: Iterable[str] = (), num_prompts: int = 1, soft_tokens: int = 1):
        if num_prompts < 1:
            raise ValueError("num_prompts must be >= 1")
        self.num_prompts = num_prompts
        self.soft_tokens = soft_tokens
        self.reserved = [PAD, UNK, CLS]
        self.reserved += [f"[P{i + 1}]" for i in range(num_prompts)]
        self.reserved += [f"[T{i + 1}]" for i in range(num_prompts)]
        self.reserved += [f"<s{i + 1}>" for i in range(soft_tokens)]
        self._reserved = set(self.reserved)
        self.itos: list[str] = list(self.reserved)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        for w in (*HARD_CONTEXT, *words):
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self.stoi:
            self.stoi[word] = len(self.itos)
            self.itos.append(word)
        return self.stoi[word]

    def __len__(self) -> int:
        return len(self.itos)

    def __getitem__(self, word: str) -> int:
        if word in self._reserved:
            return self.unk_id
        return self.stoi.get(word, self.unk_id)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    def position_slot(self, i: int) -> int:
        return 3 + i

    def type_slot(self, i: int) -> int:
        return 3 + self.num_prompts + i

    def soft_token(self, j: int) -> int:
        return 3 + 2 * self.num_prompts + j

    @property
    def words(self) -> list[str]:
        return self.itos[len(self.reserved):]

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self[w] for w in words]

    def to_dict(self) -> dict:
        return {"num_prompts": self.num_prompts, "soft_tokens": self.soft_tokens, "words": self.words}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        v = cls(num_prompts=d["num_prompts"], soft_tokens=d["soft_tokens"])
        for w in d["words"]:
            v.add(w)
        return v


@dataclass
class PromptedSequence:
    ids: list[int]
    position_slots: list[int]
    type_slots: list[int]
    sentence_start: int
    n: int
    k: int

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def cls_index(self) -> int:
        return self.k


def prompt_block(num_prompts: int, kind: TemplateKind, vocab: Vocab) -> tuple[list[int], list[int], list[int]]:
    if num_prompts > vocab.num_prompts:
        raise ValueError(f"vocab reserves {vocab.num_prompts} prompts, asked for {num_prompts}")
    ids: list[int] = []
    pos_slots: list[int] = []
    type_slots: list[int] = []
    for i in range(num_prompts):
        pos_slots.append(len(ids))
        ids.append(vocab.position_slot(i))
        if kind.variant == "hard":
            ids += [vocab.stoi["is"], vocab.stoi["a"]]
        elif kind.variant == "soft":
            ids += [vocab.soft_token(j) for j in range(kind.soft_tokens)]
        type_slots.append(len(ids))
        ids.append(vocab.type_slot(i))
        if kind.variant == "hard":
            ids.append(vocab.stoi["entity"])
    return ids, pos_slots, type_slots


def build_input(
    sentence: Sequence[str],
    num_prompts: int,
    kind: TemplateKind,
    vocab: Vocab,
    max_len: int | None = None,
) -> PromptedSequence:
    if num_prompts < 1:
        raise ValueError("num_prompts must be >= 1")
    if not sentence:
        raise ValueError("sentence is empty")
    k = num_prompts * kind.prompt_length
    total = k + 1 + len(sentence)
    if max_len is not None and total > max_len:
        raise SequenceTooLong(total, max_len)
    ids, pos_slots, type_slots = prompt_block(num_prompts, kind, vocab)
    ids = ids + [vocab.cls_id] + vocab.encode(sentence)
    return PromptedSequence(ids, pos_slots, type_slots, k + 1, len(sentence), k)


def render(seq: PromptedSequence, vocab: Vocab) -> str:
    return " ".join(vocab.itos[i] for i in seq.ids)


def build_prompt_agnostic_mask(n: int, k: int) -> AttentionMask:
    """Block [CLS] and sentence queries from every prompt key."""
    if n < 1 or k < 0:
        raise ValueError(f"need n >= 1 and k >= 0, got n={n}, k={k}")
    total = k + 1 + n
    blocked = torch.zeros(total, total, dtype=torch.bool)
    blocked[k:, :k] = True
    return AttentionMask(blocked)


@dataclass
class Batch:
    """Padded batch of prompted sequences sharing one prompt block."""

    ids: torch.Tensor  # (B, k + 1 + Nmax)
    lengths: list[int]  # sentence word counts
    k: int
    position_slots: list[int]
    type_slots: list[int]
    mask: AttentionMask
    word_mask: torch.Tensor = field(repr=False)  # (B, Nmax) True on real words

    @property
    def size(self) -> int:
        return self.ids.shape[0]


def collate(seqs: Sequence[PromptedSequence], pad_id: int = 0, prompt_agnostic: bool = True) -> Batch:
    if not seqs:
        raise ValueError("empty batch")
    k = seqs[0].k
    if any(s.k != k or s.position_slots != seqs[0].position_slots for s in seqs):
        raise ValueError("all sequences in a batch must share the prompt block")
    nmax = max(s.n for s in seqs)
    total = k + 1 + nmax
    ids = torch.full((len(seqs), total), pad_id, dtype=torch.long)
    blocked = torch.zeros(len(seqs), total, total, dtype=torch.bool)
    word_mask = torch.zeros(len(seqs), nmax, dtype=torch.bool)
    for b, s in enumerate(seqs):
        ids[b, : len(s.ids)] = torch.tensor(s.ids, dtype=torch.long)
        blocked[b, :, len(s.ids):] = True
        if prompt_agnostic:
            blocked[b, k:, :k] = True
        word_mask[b, : s.n] = True
    return Batch(ids, [s.n for s in seqs], k, list(seqs[0].position_slots), list(seqs[0].type_slots),
                 AttentionMask(blocked), word_mask)
