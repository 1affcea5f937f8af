"""Training loop, learning-rate schedule, evaluation metrics and sweeps."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .data import Corpus, CorpusRecord
from .matching import (
    UNTYPED,
    AugmentedLabelSet,
    Entity,
    TooManyEntities,
    augment_gold,
    compute_losses,
    cost_matrix,
    hungarian_solve,
    static_fill,
)
from .model import ModelConfig, PredictionSet, SlotNER, decode_entities
from .template import PromptedSequence, TemplateKind, Vocab, build_input, collate

log = logging.getLogger(__name__)

MODES = ("full", "locate_only")
MATCHING = ("dynamic", "static")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    warmup: float = 0.1
    epochs: int = 30
    batch_size: int = 16
    lambda1: float = 1.0
    lambda2: float = 2.0
    seed: int = 0
    mode: str = "full"
    freeze_encoder: bool = False
    matching: str = "dynamic"
    label_expansion: bool = True
    upper_limit: int | None = None
    boundary_negatives: bool = True
    clip_norm: float = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.warmup < 1.0:
            raise ValueError("warmup fraction must lie in [0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.matching not in MATCHING:
            raise ValueError(f"matching must be one of {MATCHING}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("need epochs >= 0 and batch_size >= 1")
        self.betas = tuple(self.betas)


class NonFiniteLoss(FloatingPointError):
    pass


def lr_at(step: int, total: int, peak: float, warmup: float) -> float:
    """Linear warmup from 0 to ``peak``, then linear decay to 0 at ``total``."""
    if total <= 0:
        return 0.0
    ramp = int(round(warmup * total))
    if step < ramp:
        return peak * step / ramp
    if step >= total:
        return 0.0
    return peak * (total - step) / (total - ramp)


# ---------------------------------------------------------------------------
# instances


@dataclass
class Instance:
    seq: PromptedSequence
    gold: list[Entity]
    id: str | None = None


def make_instances(corpus: Corpus, vocab: Vocab, mcfg: ModelConfig) -> list[Instance]:
    kind = TemplateKind(mcfg.template, mcfg.soft_tokens)
    out = []
    for idx, rec in enumerate(corpus):
        gold = corpus.gold(rec)
        if len(gold) > mcfg.num_prompts:
            raise TooManyEntities(len(gold), mcfg.num_prompts)
        seq = build_input(rec.tokens, mcfg.num_prompts, kind, vocab, mcfg.max_len)
        out.append(Instance(seq, gold, rec.id if rec.id is not None else str(idx)))
    return out


def build_vocab(corpus: Corpus, mcfg_or_prompts: ModelConfig | int, soft_tokens: int = 1) -> Vocab:
    if isinstance(mcfg_or_prompts, ModelConfig):
        return Vocab(corpus.words(), mcfg_or_prompts.num_prompts, mcfg_or_prompts.soft_tokens)
    return Vocab(corpus.words(), mcfg_or_prompts, soft_tokens)


def assign(gold: Sequence[Entity], pred: PredictionSet, cfg: TrainConfig, m: int) -> tuple[AugmentedLabelSet, list[int]]:
    """Labels and prompt permutation for one instance under the configured filling."""
    if cfg.mode == "locate_only":
        gold = [Entity(e.l, e.r, UNTYPED) for e in dict.fromkeys(Entity(g.l, g.r, UNTYPED) for g in gold)]
    if cfg.matching == "static":
        labels, a = static_fill(gold, m)
        return labels, a.sigma
    labels = augment_gold(gold, m, cfg.upper_limit, expand=cfg.label_expansion)
    p_type, p_left, p_right = pred.numpy()
    a = hungarian_solve(cost_matrix(labels.labels, p_type, p_left, p_right))
    return labels, a.sigma


# ---------------------------------------------------------------------------
# training


class Trainer:
    def __init__(self, model: SlotNER, cfg: TrainConfig, total_steps: int):
        self.model = model
        self.cfg = cfg
        self.total_steps = total_steps
        self.step = 0
        freeze = cfg.freeze_encoder or cfg.mode == "locate_only"
        frozen = {id(p) for p in model.encoder_parameters()} if freeze else set()
        for p in model.parameters():
            p.requires_grad_(id(p) not in frozen)
        if cfg.mode == "locate_only":
            for p in model.classifier.parameters():
                p.requires_grad_(False)
        self.params = [p for p in model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.Adam(self.params, lr=0.0, betas=cfg.betas, eps=cfg.adam_eps)

    def batch_loss(self, instances: Sequence[Instance]):
        m = self.model.config.num_prompts
        batch = collate([x.seq for x in instances], prompt_agnostic=self.model.config.prompt_agnostic)
        pred = self.model(batch)
        lam1 = 0.0 if self.cfg.mode == "locate_only" else self.cfg.lambda1
        out = []
        for b, inst in enumerate(instances):
            p = pred.instance(b)
            labels, sigma = assign(inst.gold, p, self.cfg, m)
            l1, l2, loss = compute_losses(labels, sigma, p, lam1, self.cfg.lambda2,
                                          negatives=self.cfg.boundary_negatives)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at step {self.step}, instance {inst.id}")
            out.append((l1, l2, loss))
        n = len(instances)
        l1 = sum(o[0] for o in out) / n
        l2 = sum(o[1] for o in out) / n
        loss = sum(o[2] for o in out) / n
        return l1, l2, loss

    def train_step(self, instances: Sequence[Instance]) -> dict:
        lr = lr_at(self.step, self.total_steps, self.cfg.lr, self.cfg.warmup)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        l1, l2, loss = self.batch_loss(instances)
        loss.backward()
        if self.cfg.clip_norm and self.cfg.clip_norm > 0:
            torch.nn.utils.clip_grad_norm_(self.params, self.cfg.clip_norm)
        self.optimizer.step()
        rec = {"step": self.step, "L": loss.item(), "L1": float(l1.detach()), "L2": float(l2.detach()), "lr": lr}
        self.step += 1
        return rec


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)


def init_model(mcfg: ModelConfig, seed: int) -> SlotNER:
    set_determinism(seed)
    return SlotNER(mcfg)


def fit(
    model: SlotNER,
    train: Sequence[Instance],
    cfg: TrainConfig,
    on_step: Callable[[dict], None] | None = None,
    on_epoch: Callable[[int, SlotNER], None] | None = None,
) -> list[dict]:
    """Train ``model`` in place; returns one metrics record per step."""
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size) if train else 0
    trainer = Trainer(model, cfg, steps_per_epoch * cfg.epochs)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            rec = trainer.train_step([train[i] for i in idx])
            rec["epoch"] = epoch
            history.append(rec)
            if on_step:
                on_step(rec)
        if on_epoch:
            on_epoch(epoch, model)
    return history


def warmup_locate_train(model: SlotNER, train: Sequence[Instance], cfg: TrainConfig, **kw) -> list[dict]:
    """Locate-only training with a frozen encoder; the loss is the locating term alone."""
    return fit(model, train, replace(cfg, mode="locate_only", freeze_encoder=True), **kw)


# ---------------------------------------------------------------------------
# inference and evaluation


@torch.no_grad()
def predict_instances(model: SlotNER, instances: Sequence[PromptedSequence], batch_size: int = 64) -> list[list[Entity]]:
    model.eval()
    out: list[list[Entity]] = []
    for s in range(0, len(instances), batch_size):
        chunk = list(instances[s:s + batch_size])
        pred = model(collate(chunk, prompt_agnostic=model.config.prompt_agnostic))
        out += [decode_entities(pred.instance(b), model.config.null_type) for b in range(len(chunk))]
    return out


def predict_sentences(model: SlotNER, vocab: Vocab, sentences: Iterable[Sequence[str]], batch_size: int = 64) -> list[list[Entity]]:
    kind = TemplateKind(model.config.template, model.config.soft_tokens)
    seqs = [build_input(s, model.config.num_prompts, kind, vocab, model.config.max_len) for s in sentences]
    return predict_instances(model, seqs, batch_size)


def _prf(correct: int, predicted: int, gold: int) -> tuple[float, float, float]:
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    loc_precision: float
    loc_recall: float
    loc_f1: float
    typing_accuracy: float
    per_type_f1: dict[str, float] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[tuple[str, float]]:
        rows = [("precision", self.precision), ("recall", self.recall), ("f1", self.f1),
                ("loc_precision", self.loc_precision), ("loc_recall", self.loc_recall),
                ("loc_f1", self.loc_f1), ("typing_accuracy", self.typing_accuracy)]
        rows += [(f"f1[{t}]", v) for t, v in self.per_type_f1.items()]
        return rows


def score(gold: Sequence[Iterable[Entity]], pred: Sequence[Iterable[Entity]], types: Sequence[str] | None = None) -> EvalReport:
    """Micro P/R/F1 over exact triples, locating over spans, typing on located spans."""
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    n_gold = n_pred = n_correct = 0
    n_gold_spans = n_pred_spans = n_located = 0
    n_typed_ok = n_typed = 0
    per_type: dict[int, list[int]] = {}
    for g, p in zip(gold, pred):
        gset = {tuple(e) for e in g}
        pset = {tuple(e) for e in p}
        n_gold += len(gset)
        n_pred += len(pset)
        n_correct += len(gset & pset)
        gspans = {(l, r) for l, r, _ in gset}
        pspans = {(l, r) for l, r, _ in pset}
        n_gold_spans += len(gspans)
        n_pred_spans += len(pspans)
        n_located += len(gspans & pspans)
        for e in pset:
            if (e[0], e[1]) in gspans:
                n_typed += 1
                n_typed_ok += e in gset
        for t in {e[2] for e in gset | pset}:
            c = per_type.setdefault(t, [0, 0, 0])
            gt = {e for e in gset if e[2] == t}
            pt = {e for e in pset if e[2] == t}
            c[0] += len(gt & pt)
            c[1] += len(pt)
            c[2] += len(gt)
    p, r, f = _prf(n_correct, n_pred, n_gold)
    lp, lr, lf = _prf(n_located, n_pred_spans, n_gold_spans)
    per_type_f1 = {}
    for t in sorted(per_type, key=lambda x: (x is None, x)):
        name = types[t] if types is not None and isinstance(t, int) and 0 <= t < len(types) else str(t)
        per_type_f1[name] = _prf(*per_type[t])[2]
    return EvalReport(
        p, r, f, lp, lr, lf,
        n_typed_ok / n_typed if n_typed else 0.0,
        per_type_f1,
        {"gold": n_gold, "predicted": n_pred, "correct": n_correct,
         "gold_spans": n_gold_spans, "predicted_spans": n_pred_spans, "located": n_located},
    )


def evaluate(model: SlotNER, vocab: Vocab, corpus: Corpus, batch_size: int = 64) -> EvalReport:
    kind = TemplateKind(model.config.template, model.config.soft_tokens)
    seqs = [build_input(r.tokens, model.config.num_prompts, kind, vocab, model.config.max_len) for r in corpus]
    pred = predict_instances(model, seqs, batch_size)
    return score([corpus.gold(r) for r in corpus], pred, corpus.types)


def entities_to_record(tokens: Sequence[str], ents: Iterable[Entity], types: Sequence[str], rid: str | None = None) -> CorpusRecord:
    from .data import Span
    spans = [Span(e.l, e.r, None if e.t in (None, UNTYPED) else types[e.t]) for e in ents]
    return CorpusRecord(list(tokens), spans, rid)


# ---------------------------------------------------------------------------
# sweeps


SWEEP_AXES = {"M": "num_prompts", "I": "interaction_layers"}


def run_experiment(train: Corpus, test: Corpus, mcfg: ModelConfig, tcfg: TrainConfig,
                   on_step: Callable[[dict], None] | None = None) -> tuple[SlotNER, Vocab, EvalReport, list[dict]]:
    vocab = build_vocab(train, mcfg)
    mcfg = replace(mcfg, vocab_size=len(vocab), num_types=len(train.types))
    model = init_model(mcfg, tcfg.seed)
    history = fit(model, make_instances(train, vocab, mcfg), tcfg, on_step=on_step)
    return model, vocab, evaluate(model, vocab, test), history


def run_sweep(axis: str, values: Sequence[int], train: Corpus, test: Corpus, mcfg: ModelConfig,
              tcfg: TrainConfig) -> list[tuple[int, EvalReport]]:
    """Train and evaluate once per value of ``M`` or ``I``."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {list(SWEEP_AXES)}")
    results = []
    for v in values:
        cfg = replace(mcfg, **{SWEEP_AXES[axis]: int(v)})
        _, _, report, _ = run_experiment(train, test, cfg, tcfg)
        log.info("sweep %s=%s f1=%.4f", axis, v, report.f1)
        results.append((int(v), report))
    return results


def metrics_line(rec: dict) -> str:
    return json.dumps({k: rec[k] for k in ("step", "L", "L1", "L2", "lr") if k in rec})
