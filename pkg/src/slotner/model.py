"""Slot-filling NER model: encoder, prompt interaction, typing and locating heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import core
from .core import AttentionMask, masked_attention
from .matching import Entity
from .template import Batch, SequenceTooLong


@dataclass
class ModelConfig:
    vocab_size: int
    num_types: int
    hidden: int = 64
    layers: int = 2
    heads: int = 4
    interaction_layers: int = 3
    num_prompts: int = 12
    max_len: int = 256
    template: str = "default"
    soft_tokens: int = 1
    ffn_mult: int = 4
    prompt_agnostic: bool = True

    def __post_init__(self) -> None:
        if self.hidden % self.heads:
            raise ValueError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if self.interaction_layers < 0:
            raise ValueError("interaction_layers must be >= 0")
        if self.num_prompts < 1 or self.num_types < 1:
            raise ValueError("need num_prompts >= 1 and num_types >= 1")

    @property
    def null_type(self) -> int:
        return self.num_types

    def to_dict(self) -> dict:
        return asdict(self)


def _trunc_normal(*shape: int, std: float = 0.02) -> nn.Parameter:
    w = torch.empty(*shape)
    nn.init.trunc_normal_(w, std=std, a=-2 * std, b=2 * std)
    return nn.Parameter(w)


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = _trunc_normal(d_out, d_in, std=d_in ** -0.5)
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return core.linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return core.layer_norm(x, self.gain, self.bias)


class Attention(nn.Module):
    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = Linear(hidden, hidden)
        self.k = Linear(hidden, hidden, bias=False)  # a key bias cannot change attention weights
        self.v = Linear(hidden, hidden)
        self.o = Linear(hidden, hidden)

    def forward(self, x: torch.Tensor, memory: torch.Tensor | None = None,
                mask: AttentionMask | None = None) -> torch.Tensor:
        memory = x if memory is None else memory
        out = masked_attention(self.q(x), self.k(memory), self.v(memory), mask, self.heads)
        return self.o(out)


class EncoderBlock(nn.Module):
    def __init__(self, hidden: int, heads: int, ffn_mult: int):
        super().__init__()
        self.attn = Attention(hidden, heads)
        self.ln1 = LayerNorm(hidden)
        self.ff_in = Linear(hidden, ffn_mult * hidden)
        self.ff_out = Linear(ffn_mult * hidden, hidden)
        self.ln2 = LayerNorm(hidden)

    def forward(self, x: torch.Tensor, mask: AttentionMask) -> torch.Tensor:
        x = self.ln1(x + self.attn(x, mask=mask))
        return self.ln2(x + self.ff_out(torch.nn.functional.gelu(self.ff_in(x))))


class InteractionBlock(nn.Module):
    """Self-attention among slots of one kind, then slot-to-sentence cross-attention."""

    def __init__(self, hidden: int, heads: int):
        super().__init__()
        self.self_attn = Attention(hidden, heads)
        self.ln1 = LayerNorm(hidden)
        self.cross_attn = Attention(hidden, heads)
        self.ln2 = LayerNorm(hidden)

    def forward(self, slots: torch.Tensor, sentence: torch.Tensor, sentence_mask: AttentionMask) -> torch.Tensor:
        slots = self.ln1(slots + self.self_attn(slots))
        return self.ln2(slots + self.cross_attn(slots, sentence, sentence_mask))


class BoundaryHead(nn.Module):
    """Per-word boundary logits for every prompt.

    ``fused[i, j] = W1 slot_i + W2 word_j``; the logit is ``v . tanh(W3 fused + b3) + c``.
    """

    def __init__(self, hidden: int):
        super().__init__()
        self.w1 = Linear(hidden, hidden, bias=False)
        self.w2 = Linear(hidden, hidden, bias=False)
        self.w3 = Linear(hidden, hidden)
        self.out = Linear(hidden, 1)

    def forward(self, slots: torch.Tensor, words: torch.Tensor) -> torch.Tensor:
        fused = self.w1(slots).unsqueeze(-2) + self.w2(words).unsqueeze(-3)  # (..., M, N, h)
        return self.out(torch.tanh(self.w3(fused))).squeeze(-1)


@dataclass
class PredictionSet:
    """Per-prompt type distribution and per-word boundary probabilities.

    Tensors are ``(M, C+1)``, ``(M, N)``, ``(M, N)`` for one sentence, or carry
    a leading batch dimension. The last type class is the empty class.
    """

    type_logits: torch.Tensor
    left_logits: torch.Tensor
    right_logits: torch.Tensor
    lengths: list[int] | None = field(default=None, repr=False)

    @property
    def p_type(self) -> torch.Tensor:
        return torch.softmax(self.type_logits, dim=-1)

    @property
    def p_left(self) -> torch.Tensor:
        return torch.sigmoid(self.left_logits)

    @property
    def p_right(self) -> torch.Tensor:
        return torch.sigmoid(self.right_logits)

    def __len__(self) -> int:
        return self.type_logits.shape[0]

    def instance(self, b: int) -> "PredictionSet":
        n = self.lengths[b] if self.lengths is not None else self.left_logits.shape[-1]
        return PredictionSet(self.type_logits[b], self.left_logits[b, :, :n], self.right_logits[b, :, :n])

    def numpy(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        with torch.no_grad():
            return (self.p_type.double().numpy(), self.p_left.double().numpy(), self.p_right.double().numpy())


class SlotNER(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        h = config.hidden
        self.tok_emb = _trunc_normal(config.vocab_size, h)
        self.pos_emb = _trunc_normal(config.max_len, h)
        self.emb_ln = LayerNorm(h)
        self.encoder = nn.ModuleList(EncoderBlock(h, config.heads, config.ffn_mult) for _ in range(config.layers))
        self.prompt_id = nn.Parameter(torch.randn(config.num_prompts, h) * 0.02)
        self.interact_pos = nn.ModuleList(InteractionBlock(h, config.heads) for _ in range(config.interaction_layers))
        self.interact_type = nn.ModuleList(InteractionBlock(h, config.heads) for _ in range(config.interaction_layers))
        self.classifier = Linear(h, config.num_types + 1)
        self.left = BoundaryHead(h)
        self.right = BoundaryHead(h)
        self.encoded_sentences = 0
        self.encoder_calls = 0

    def encoder_parameters(self) -> list[nn.Parameter]:
        return [self.tok_emb, self.pos_emb, *self.emb_ln.parameters(), *self.encoder.parameters()]

    def encode(self, batch: Batch, prompt_agnostic: bool | None = None):
        """Returns ``(H^X, H^P, H^T)`` shaped ``(B, Nmax, h)``, ``(B, M, h)``, ``(B, M, h)``."""
        if batch.ids.shape[1] > self.config.max_len:
            raise SequenceTooLong(batch.ids.shape[1], self.config.max_len)
        self.encoder_calls += 1
        self.encoded_sentences += batch.size
        k = batch.k
        mask = batch.mask
        use_mask = self.config.prompt_agnostic if prompt_agnostic is None else prompt_agnostic
        if use_mask and not bool(mask.blocked[:, k:, :k].all()):
            blocked = mask.blocked.clone()
            blocked[:, k:, :k] = True
            mask = AttentionMask(blocked)
        elif not use_mask and k and bool(mask.blocked[:, k:, :k].any()):
            blocked = mask.blocked.clone()
            blocked[:, k:, :k] = False
            mask = AttentionMask(blocked)
        x = core.embedding(batch.ids, self.tok_emb)
        sent_len = x.shape[1] - k
        pos = self.pos_emb[:sent_len]
        x = torch.cat([x[:, :k], x[:, k:] + pos], dim=1)
        x = self.emb_ln(x)
        for block in self.encoder:
            x = block(x, mask)
        hx = x[:, k + 1:]
        hp = x[:, batch.position_slots]
        ht = x[:, batch.type_slots]
        return hx, hp, ht

    def prompt_interaction(self, hp: torch.Tensor, ht: torch.Tensor, hx: torch.Tensor,
                           word_mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        m = hp.shape[-2]
        if hp.shape != ht.shape or m != self.prompt_id.shape[0] or hp.shape[-1] != hx.shape[-1]:
            raise core.ShapeError("prompt_interaction", hp.shape, hx.shape)
        if word_mask is None:
            word_mask = torch.ones(hx.shape[:-1], dtype=torch.bool)
        cross_mask = AttentionMask((~word_mask).unsqueeze(-2).expand(*word_mask.shape[:-1], m, word_mask.shape[-1]))
        p = hp + self.prompt_id
        t = ht + self.prompt_id
        for block in self.interact_pos:
            p = block(p, hx, cross_mask)
        for block in self.interact_type:
            t = block(t, hx, cross_mask)
        return p, t

    def type_logits(self, slots: torch.Tensor) -> torch.Tensor:
        return self.classifier(slots)

    def type_probs(self, slots: torch.Tensor) -> torch.Tensor:
        return core.softmax(self.type_logits(slots))

    def boundary_logits(self, slots: torch.Tensor, hx: torch.Tensor, side: str) -> torch.Tensor:
        head = {"left": self.left, "right": self.right}[side]
        return head(slots, hx)

    def boundary_probs(self, slots: torch.Tensor, hx: torch.Tensor, side: str) -> torch.Tensor:
        return core.sigmoid(self.boundary_logits(slots, hx, side))

    def forward(self, batch: Batch) -> PredictionSet:
        hx, hp, ht = self.encode(batch)
        p, t = self.prompt_interaction(hp, ht, hx, batch.word_mask)
        pad = ~batch.word_mask.unsqueeze(1)
        neg = torch.finfo(hx.dtype).min
        left = self.boundary_logits(p, hx, "left").masked_fill(pad, neg)
        right = self.boundary_logits(p, hx, "right").masked_fill(pad, neg)
        return PredictionSet(self.type_logits(t), left, right, list(batch.lengths))


def decode_entities(pred: PredictionSet | Sequence[np.ndarray], null_type: int | None = None) -> list[Entity]:
    """Entities from one sentence's predictions.

    Each prompt proposes ``(argmax p^l, argmax p^r, argmax p^t)``; empty-type
    and inverted spans are dropped, and among proposals sharing a span the
    one with the highest ``p^t * p^l * p^r`` wins.
    """
    if isinstance(pred, PredictionSet):
        p_type, p_left, p_right = pred.numpy()
    else:
        p_type, p_left, p_right = (np.asarray(a) for a in pred)
    null_type = p_type.shape[-1] - 1 if null_type is None else null_type
    best: dict[tuple[int, int], tuple[float, int]] = {}
    for i in range(p_type.shape[0]):
        t = int(np.argmax(p_type[i]))
        if t == null_type:
            continue
        l = int(np.argmax(p_left[i]))
        r = int(np.argmax(p_right[i]))
        if l > r:
            continue
        score = float(p_type[i, t] * p_left[i, l] * p_right[i, r])
        key = (l + 1, r + 1)
        if key not in best or (score, -t) > (best[key][0], -best[key][1]):
            best[key] = (score, t)
    return sorted(Entity(l, r, t) for (l, r), (_, t) in best.items())
