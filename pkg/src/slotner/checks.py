"""Gradient-check suites for the op set and the full model loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch.func import functional_call

from . import core
from .core import AttentionMask, grad_check
from .matching import Entity, augment_gold, compute_losses, cost_matrix, hungarian_solve
from .model import ModelConfig, SlotNER
from .template import TemplateKind, Vocab, build_input, collate


def _rand(gen: torch.Generator, *shape: int) -> torch.Tensor:
    return torch.randn(*shape, generator=gen, dtype=torch.float64)


def op_suite(seed: int = 0, epsilon: float = 1e-6) -> dict[str, float]:
    """Max relative gradient error per op, in 64-bit."""
    g = torch.Generator().manual_seed(seed)
    a, b = _rand(g, 3, 4), _rand(g, 4, 2)
    x = _rand(g, 2, 5)
    table = _rand(g, 6, 3)
    ids = torch.tensor([[0, 4], [5, 1]])
    gain, bias = _rand(g, 5), _rand(g, 5)
    q, k, v = _rand(g, 3, 4), _rand(g, 5, 4), _rand(g, 5, 4)
    mask = AttentionMask.from_pairs(3, 5, [(0, 1), (1, 0), (1, 4), (2, 2)])
    probs_idx = torch.tensor([1, 3])
    w = _rand(g, 3, 5)
    out_w = _rand(g, 3, 2)  # fixed projection turning vector outputs into scalars

    def proj(t: torch.Tensor) -> torch.Tensor:
        return (t * torch.linspace(0.3, 1.7, t.numel(), dtype=t.dtype).reshape(t.shape)).sum()

    cases = {
        "matmul": (lambda p: proj(core.matmul(p[0], p[1])), [a, b]),
        "add": (lambda p: proj(core.add(p[0], p[1]) ** 2), [x, gain]),
        "linear": (lambda p: proj(core.linear(p[0], p[1], p[2])), [x, w, out_w[:, 0]]),
        "embedding": (lambda p: proj(core.embedding(ids, p[0]) ** 2), [table]),
        "softmax": (lambda p: proj(core.softmax(p[0])), [x]),
        "sigmoid": (lambda p: proj(core.sigmoid(p[0])), [x]),
        "layer_norm": (lambda p: proj(core.layer_norm(p[0], p[1], p[2])), [x, gain, bias]),
        "masked_attention": (lambda p: proj(core.masked_attention(p[0], p[1], p[2], mask, heads=2)), [q, k, v]),
        "gather_log_prob": (lambda p: core.gather_log_prob(core.softmax(p[0]), probs_idx).sum(), [x]),
        "weighted_sum": (lambda p: proj(core.weighted_sum([p[0], p[1] ** 2], [0.5, 2.0])), [x, _rand(g, 2, 5)]),
    }
    return {name: grad_check(fn, params, epsilon) for name, (fn, params) in cases.items()}


@dataclass
class ToyProblem:
    model: SlotNER
    batch: object
    labels: object
    sigma: list[int]
    names: list[str]

    def loss_fn(self, lambda1: float = 1.0, lambda2: float = 2.0):
        def fn(params):
            state = dict(zip(self.names, params))
            pred = functional_call(self.model, state, (self.batch,))
            return compute_losses(self.labels, self.sigma, pred.instance(0), lambda1, lambda2)[2]
        return fn

    def params(self) -> list[torch.Tensor]:
        return [p.detach().clone() for p in self.model.parameters()]


def toy_problem(seed: int, n: int = 6, m: int = 3, hidden: int = 8, layers: int = 1, heads: int = 2,
                interaction_layers: int = 1, num_types: int = 2, dtype: torch.dtype = torch.float32,
                template: str = "default", spread: float = 0.3) -> ToyProblem:
    """Tiny model, random sentence and random gold; the assignment is solved once and frozen."""
    rng = np.random.default_rng(seed)
    words = [f"v{i}" for i in range(5)]
    vocab = Vocab(words, num_prompts=m)
    sentence = [words[int(i)] for i in rng.integers(len(words), size=n)]
    torch.manual_seed(seed)
    cfg = ModelConfig(vocab_size=len(vocab), num_types=num_types, hidden=hidden, layers=layers, heads=heads,
                      interaction_layers=interaction_layers, num_prompts=m, max_len=64, template=template)
    model = SlotNER(cfg).to(dtype)
    # spread the parameters so no activation sits in a flat regime
    with torch.no_grad():
        for p in model.parameters():
            if p.dim() > 1:
                p.normal_(0.0, spread)
    seq = build_input(sentence, m, TemplateKind(template), vocab, cfg.max_len)
    batch = collate([seq])
    k = int(rng.integers(1, m + 1))
    gold = []
    for _ in range(k):
        l = int(rng.integers(1, n + 1))
        r = int(rng.integers(l, n + 1))
        gold.append(Entity(l, r, int(rng.integers(num_types))))
    labels = augment_gold(sorted(set(gold)), m)
    with torch.no_grad():
        p_type, p_left, p_right = model(batch).instance(0).numpy()
    sigma = hungarian_solve(cost_matrix(labels.labels, p_type, p_left, p_right)).sigma
    names = [name for name, _ in model.named_parameters()]
    return ToyProblem(model, batch, labels, sigma, names)


CHUNK = 512  # perturbed copies evaluated per vmap call


def model_grad_error(seed: int, precision: str = "64", epsilon: float = 1e-3, **kw) -> float:
    """Full-model loss: reverse-mode gradient vs central differences.

    ``precision="64"`` runs both sides in float64. ``precision="32"`` checks
    the float32 reverse-mode gradient; the central differences are taken on
    the float64 promotion of the same parameter values.
    """
    if precision == "64":
        prob = toy_problem(seed, dtype=torch.float64, **kw)
        return grad_check(prob.loss_fn(), prob.params(), epsilon, chunk=CHUNK, richardson=True)
    if precision != "32":
        raise ValueError("precision must be '32' or '64'")
    prob = toy_problem(seed, dtype=torch.float32, **kw)
    params32 = prob.params()
    fn = prob.loss_fn()
    leaves = [p.clone().requires_grad_(True) for p in params32]
    analytic = torch.autograd.grad(fn(leaves), leaves, allow_unused=True)
    analytic = [torch.zeros_like(p) if a is None else a for p, a in zip(leaves, analytic)]
    prob.model.double()
    return grad_check(prob.loss_fn(), params32, epsilon, oracle_dtype=torch.float64, analytic=analytic,
                      chunk=CHUNK, richardson=True)


def model_suite(seeds=range(5), epsilon: float = 1e-3, **kw) -> dict[str, float]:
    out = {}
    for s in seeds:
        out[f"seed{s}/64"] = model_grad_error(s, "64", epsilon, **kw)
        out[f"seed{s}/32"] = model_grad_error(s, "32", epsilon, **kw)
    return out
