"""Differentiable array substrate.

Arrays are ``torch.Tensor`` objects; torch records the computation graph and
supplies reverse-mode gradients. This module adds what the model needs on
top: shape-checked wrappers for the op set, attention with an additive
blocking mask, and a central-difference gradient checker that is independent
of the autograd path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import torch

DTYPE = torch.float32
CHECK_DTYPE = torch.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""

    def __init__(self, op: str, left: Sequence[int], right: Sequence[int], detail: str = ""):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right)
        msg = f"{op}: incompatible shapes {self.left} and {self.right}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AttentionMask:
    """Boolean mask of ``(..., rows, cols)``; ``True`` marks a blocked pair."""

    blocked: torch.Tensor

    def __post_init__(self) -> None:
        if self.blocked.dtype != torch.bool:
            object.__setattr__(self, "blocked", self.blocked.to(torch.bool))
        if self.blocked.dim() < 2:
            raise ShapeError("AttentionMask", self.blocked.shape, (), "need at least 2 dims")

    @classmethod
    def empty(cls, rows: int, cols: int) -> "AttentionMask":
        return cls(torch.zeros(rows, cols, dtype=torch.bool))

    @classmethod
    def from_pairs(cls, rows: int, cols: int, pairs: Iterable[tuple[int, int]]) -> "AttentionMask":
        blocked = torch.zeros(rows, cols, dtype=torch.bool)
        for r, c in pairs:
            if not (0 <= r < rows and 0 <= c < cols):
                raise IndexError(f"blocked pair {(r, c)} outside {rows}x{cols}")
            blocked[r, c] = True
        return cls(blocked)

    @property
    def rows(self) -> int:
        return self.blocked.shape[-2]

    @property
    def cols(self) -> int:
        return self.blocked.shape[-1]

    def pairs(self) -> set[tuple[int, int]]:
        if self.blocked.dim() != 2:
            raise ValueError("pairs() is only defined for an unbatched mask")
        return {(int(r), int(c)) for r, c in self.blocked.nonzero().tolist()}

    def __len__(self) -> int:
        return int(self.blocked.sum())

    def __or__(self, other: "AttentionMask") -> "AttentionMask":
        return AttentionMask(self.blocked | other.blocked)


# ---------------------------------------------------------------------------
# op set


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError("add", a.shape, b.shape) from None
    return a + b


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError("linear", x.shape, weight.shape)
    return torch.nn.functional.linear(x, weight, bias)


def embedding(ids: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeError("embedding", ids.shape, table.shape, "id out of range")
    return table[ids]


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return torch.softmax(x, dim=dim)


def sigmoid(x: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(x)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if gain.shape != x.shape[-1:]:
        raise ShapeError("layer_norm", x.shape, gain.shape)
    return torch.nn.functional.layer_norm(x, gain.shape, gain, bias, eps)


PROB_FLOOR = 1e-12


def gather_log_prob(probs: torch.Tensor, index: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """``log(probs[index])`` along ``dim`` with probabilities floored at 1e-12."""
    picked = torch.gather(probs, dim, index.unsqueeze(dim)).squeeze(dim)
    return torch.log(picked.clamp_min(PROB_FLOOR))


def weighted_sum(terms: Sequence[torch.Tensor], weights: Sequence[float]) -> torch.Tensor:
    if len(terms) != len(weights):
        raise ShapeError("weighted_sum", (len(terms),), (len(weights),))
    out = terms[0] * weights[0]
    for t, w in zip(terms[1:], weights[1:]):
        out = out + t * w
    return out


def masked_attention(
    queries: torch.Tensor,
    keys: torch.Tensor,
    values: torch.Tensor,
    mask: AttentionMask | None = None,
    heads: int = 1,
    return_weights: bool = False,
):
    """Scaled dot-product attention over ``heads`` heads.

    Inputs are ``(..., n, h)``. Blocked pairs get the most negative finite
    value before the softmax and are then set to exactly zero.
    """
    h = queries.shape[-1]
    if keys.shape[-1] != h or values.shape[-1] != h:
        raise ShapeError("masked_attention", queries.shape, keys.shape)
    if keys.shape[-2] != values.shape[-2]:
        raise ShapeError("masked_attention", keys.shape, values.shape, "key/value count")
    if heads < 1 or h % heads:
        raise ShapeError("masked_attention", queries.shape, (heads,), "heads must divide h")
    nq, nk = queries.shape[-2], keys.shape[-2]
    d = h // heads
    lead = queries.shape[:-2]

    def split(x: torch.Tensor) -> torch.Tensor:
        return x.reshape(*x.shape[:-1], heads, d).transpose(-3, -2)

    q, k, v = split(queries), split(keys), split(values)
    scores = (q @ k.transpose(-1, -2)) / math.sqrt(d)
    blocked = None
    if mask is not None:
        if mask.rows != nq or mask.cols != nk:
            raise ShapeError("masked_attention", (nq, nk), (mask.rows, mask.cols), "mask dims")
        if bool(mask.blocked.all(dim=-1).any()):
            raise ValueError("masked_attention: a query row has every key blocked")
        blocked = mask.blocked.unsqueeze(-3)
        scores = scores.masked_fill(blocked, torch.finfo(scores.dtype).min)
    weights = torch.softmax(scores, dim=-1)
    if blocked is not None:
        weights = weights.masked_fill(blocked, 0.0)
    out = (weights @ v).transpose(-3, -2).reshape(*lead, nq, h)
    if return_weights:
        return out, weights
    return out


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    scalar_fn: Callable[[Sequence[torch.Tensor]], torch.Tensor],
    params: Sequence[torch.Tensor],
    epsilon: float = 1e-3,
    oracle_dtype: torch.dtype | None = None,
    analytic: Sequence[torch.Tensor] | None = None,
    chunk: int = 0,
    richardson: bool = False,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``scalar_fn`` maps a list of arrays to a scalar. The analytic gradient is
    taken by reverse mode at the dtype of ``params`` unless supplied
    directly. Central differences run at ``oracle_dtype`` (defaults to the
    params' dtype). With ``chunk > 0`` the perturbed evaluations are batched
    ``chunk`` at a time through ``torch.func.vmap``; ``scalar_fn`` must then be
    free of data-dependent Python control flow on the params. ``richardson``
    combines central differences at ``epsilon`` and ``epsilon / 2`` to cancel
    the second-order truncation term.
    """
    if analytic is None:
        leaves = [p.detach().clone().requires_grad_(True) for p in params]
        loss = scalar_fn(leaves)
        if not torch.isfinite(loss):
            raise NonFiniteError(f"grad_check: non-finite loss {loss.item()}")
        grads = torch.autograd.grad(loss, leaves, allow_unused=True)
        analytic = [torch.zeros_like(p) if g is None else g for p, g in zip(leaves, grads)]

    dtype = oracle_dtype or params[0].dtype
    base = [p.detach().to(dtype).clone() for p in params]
    worst = 0.0
    with torch.no_grad():
        for pi, p in enumerate(base):
            central = _central_differences(scalar_fn, base, pi, epsilon, chunk)
            if richardson:
                half = _central_differences(scalar_fn, base, pi, epsilon / 2, chunk)
                central = (4.0 * half - central) / 3.0
            if not torch.isfinite(central).all():
                raise NonFiniteError(f"grad_check: non-finite loss while perturbing param {pi}")
            ana = analytic[pi].detach().to(torch.float64).reshape(-1)
            denom = torch.maximum(torch.maximum(ana.abs(), central.abs()), torch.tensor(1e-8, dtype=torch.float64))
            if ana.numel():
                worst = max(worst, float(((ana - central).abs() / denom).max()))
    return worst


def _central_differences(scalar_fn, base: list[torch.Tensor], pi: int, epsilon: float, chunk: int) -> torch.Tensor:
    p = base[pi]
    n = p.numel()
    out = torch.empty(n, dtype=torch.float64)
    if chunk <= 0:
        flat = p.view(-1)
        for j in range(n):
            orig = flat[j].item()
            flat[j] = orig + epsilon
            up = float(scalar_fn(base))
            flat[j] = orig - epsilon
            down = float(scalar_fn(base))
            flat[j] = orig
            out[j] = (up - down) / (2.0 * epsilon)
        return out

    def with_param(q: torch.Tensor) -> torch.Tensor:
        return scalar_fn([q if i == pi else b for i, b in enumerate(base)])

    batched = torch.func.vmap(with_param)
    for start in range(0, n, chunk):
        idx = torch.arange(start, min(n, start + chunk))
        bump = torch.zeros(len(idx), n, dtype=p.dtype)
        bump[torch.arange(len(idx)), idx] = epsilon
        bump = bump.reshape(len(idx), *p.shape)
        up = batched(p.unsqueeze(0) + bump).to(torch.float64)
        down = batched(p.unsqueeze(0) - bump).to(torch.float64)
        out[start:start + len(idx)] = (up - down) / (2.0 * epsilon)
    return out
