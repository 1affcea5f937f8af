"""Dynamic template filling: label augmentation, match cost, assignment, losses.

Word indices are 1-based and inclusive throughout: an entity ``(l, r, t)``
covers words ``l..r`` of a sentence of ``N`` words.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch

from .core import weighted_sum

UNTYPED = -1  # position-only label: boundaries known, type unknown

DEFAULT_LAMBDA1 = 1.0
DEFAULT_LAMBDA2 = 2.0


class Entity(NamedTuple):
    l: int | None
    r: int | None
    t: int | None  # type id, UNTYPED, or None for the empty label

    @classmethod
    def null(cls) -> "Entity":
        return cls(None, None, None)

    @property
    def is_null(self) -> bool:
        return self.t is None

    @property
    def span(self) -> tuple[int, int]:
        return (self.l, self.r)


class TooManyEntities(ValueError):
    def __init__(self, k: int, m: int):
        super().__init__(f"{k} gold entities but only {m} prompts; every instance needs K <= M")


@dataclass
class AugmentedLabelSet:
    labels: list[Entity]
    origin: list[int | None]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def non_null(self) -> int:
        return sum(not e.is_null for e in self.labels)


@dataclass
class Assignment:
    sigma: list[int]  # label index -> prompt index, 0-based
    total_cost: float
    cost_matrix: np.ndarray | None = None


def default_upper_limit(m: int) -> int:
    return int(math.floor(0.9 * m))


def augment_gold(gold: Sequence[Entity], m: int, upper: int | None = None, expand: bool = True) -> AugmentedLabelSet:
    """Repeat gold entities round-robin up to ``upper`` labels, pad to ``m`` with the empty label."""
    k = len(gold)
    if k > m:
        raise TooManyEntities(k, m)
    if upper is None:
        upper = default_upper_limit(m)
    if upper > m:
        raise ValueError(f"upper limit {upper} exceeds prompt count {m}")
    target = k
    if expand and k > 0:
        target = min(m, max(k, upper))
    origin: list[int | None] = [i % k for i in range(target)] if k else []
    labels = [gold[i] for i in origin]
    origin += [None] * (m - target)
    labels += [Entity.null()] * (m - target)
    return AugmentedLabelSet(labels, origin)


def _check_bounds(e: Entity, n: int) -> None:
    if not (1 <= e.l <= e.r <= n):
        raise IndexError(f"entity boundaries ({e.l}, {e.r}) outside 1..{n}")


def match_cost(label: Entity, p_type, p_left, p_right) -> float:
    """Cost of filling one prompt (given by its three distributions) with ``label``."""
    if label.is_null:
        return 0.0
    _check_bounds(label, len(p_left))
    total = float(p_left[label.l - 1]) + float(p_right[label.r - 1])
    if label.t != UNTYPED:
        total += float(p_type[label.t])
    return -total


def cost_matrix(labels: Sequence[Entity], p_type: np.ndarray, p_left: np.ndarray, p_right: np.ndarray) -> np.ndarray:
    """Rows are labels, columns prompts; arrays are ``(M, C+1)`` and ``(M, N)``."""
    m = len(labels)
    n = p_left.shape[1]
    cost = np.zeros((m, p_type.shape[0]), dtype=np.float64)
    for i, e in enumerate(labels):
        if e.is_null:
            continue
        _check_bounds(e, n)
        row = p_left[:, e.l - 1].astype(np.float64) + p_right[:, e.r - 1]
        if e.t != UNTYPED:
            row = row + p_type[:, e.t]
        cost[i] = -row
    return cost


# ---------------------------------------------------------------------------
# assignment


def _hungarian(c: list[list[float]]) -> tuple[list[int], list[float], list[float]]:
    # shortest augmenting path with potentials; rows and cols 1-based internally
    n = len(c)
    inf = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)  # p[j]: row matched to column j
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            ci = c[i0 - 1]
            ui = u[i0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = ci[j - 1] - ui - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    sigma = [0] * n
    for j in range(1, n + 1):
        sigma[p[j] - 1] = j - 1
    return sigma, u[1:], v[1:]


def _lex_smallest(c: list[list[float]], sigma: list[int], u: list[float], v: list[float]) -> list[int]:
    """Among optimal assignments, move to the lexicographically smallest one.

    Optimal assignments are exactly the perfect matchings on tight edges of
    the dual solution, so rows are fixed in order to their smallest tight
    column that still admits a completion.
    """
    n = len(c)
    scale = max((abs(x) for row in c for x in row), default=0.0)
    tol = 1e-9 * (1.0 + scale)
    tight = [[c[i][j] - u[i] - v[j] <= tol for j in range(n)] for i in range(n)]
    sigma = list(sigma)
    owner = [0] * n
    for i, j in enumerate(sigma):
        owner[j] = i

    for i in range(n):
        for j in range(sigma[i]):
            if not tight[i][j] or owner[j] < i:
                continue
            # need an alternating path from owner[j] to sigma[i] through free rows > i
            target = sigma[i]
            start = owner[j]
            seen = {j}
            path: dict[int, tuple[int, int]] = {}  # column -> (row that takes it, previous column)
            stack = [(start, j)]
            found = None
            while stack and found is None:
                row, came = stack.pop()
                for col in range(n - 1, -1, -1):
                    if col in seen or col == came or not tight[row][col]:
                        continue
                    if col == target:
                        path[col] = (row, came)
                        found = col
                        break
                    nxt = owner[col]
                    if nxt <= i:
                        continue
                    seen.add(col)
                    path[col] = (row, came)
                    stack.append((nxt, col))
            if found is None:
                continue
            col = found
            while col != j:
                row, prev = path[col]
                sigma[row] = col
                owner[col] = row
                col = prev
            sigma[i] = j
            owner[j] = i
            break
    return sigma


def assignment_cost(cost: np.ndarray, sigma: Sequence[int]) -> float:
    return float(sum(cost[i, j] for i, j in enumerate(sigma)))


def hungarian_solve(cost: np.ndarray) -> Assignment:
    """Minimum-cost perfect assignment of rows to columns of a square matrix.

    Ties resolve toward the lexicographically smallest ``sigma``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix has non-finite entries")
    if cost.shape[0] == 0:
        return Assignment([], 0.0, cost)
    rows = cost.tolist()
    sigma, u, v = _hungarian(rows)
    total = assignment_cost(cost, sigma)
    lex = _lex_smallest(rows, sigma, u, v)
    if lex != sigma and assignment_cost(cost, lex) <= total:
        sigma = lex
        total = assignment_cost(cost, sigma)
    return Assignment(sigma, total, cost)


def brute_force_solve(cost: np.ndarray) -> Assignment:
    """Exhaustive reference; first minimum in lexicographic order of permutations."""
    cost = np.asarray(cost, dtype=np.float64)
    best, best_sigma = math.inf, None
    for perm in itertools.permutations(range(cost.shape[0])):
        total = assignment_cost(cost, perm)
        if total < best:
            best, best_sigma = total, list(perm)
    return Assignment(best_sigma or [], 0.0 if best_sigma is None else best, cost)


def static_fill(gold: Sequence[Entity], m: int) -> tuple[AugmentedLabelSet, Assignment]:
    """Order-based filling: the i-th entity in sentence order goes to prompt i."""
    if len(gold) > m:
        raise TooManyEntities(len(gold), m)
    order = sorted(range(len(gold)), key=lambda i: (gold[i].l, gold[i].r, gold[i].t if gold[i].t is not None else -2))
    labels = [gold[i] for i in order] + [Entity.null()] * (m - len(gold))
    origin: list[int | None] = list(order) + [None] * (m - len(gold))
    return AugmentedLabelSet(labels, origin), Assignment(list(range(m)), math.nan)


# ---------------------------------------------------------------------------
# losses


def _log_probs(pred) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """log p^t, log p^l, log(1 - p^l), log p^r, log(1 - p^r) for one instance."""
    if getattr(pred, "type_logits", None) is not None:
        lt = torch.log_softmax(pred.type_logits, dim=-1)
        ll, lr = pred.left_logits, pred.right_logits
        return (lt, torch.nn.functional.logsigmoid(ll), torch.nn.functional.logsigmoid(-ll),
                torch.nn.functional.logsigmoid(lr), torch.nn.functional.logsigmoid(-lr))
    floor = 1e-12
    pt, pl, pr = pred.p_type, pred.p_left, pred.p_right
    return (pt.clamp_min(floor).log(), pl.clamp_min(floor).log(), (1 - pl).clamp_min(floor).log(),
            pr.clamp_min(floor).log(), (1 - pr).clamp_min(floor).log())


def compute_losses(
    labels: AugmentedLabelSet | Sequence[Entity],
    sigma: Sequence[int],
    pred,
    lambda1: float = DEFAULT_LAMBDA1,
    lambda2: float = DEFAULT_LAMBDA2,
    negatives: bool = True,
    null_type: int | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Typing loss L1, locating loss L2 and ``lambda1 * L1 + lambda2 * L2``.

    ``pred`` holds one instance's ``(M, C+1)`` type and ``(M, N)`` boundary
    scores. With ``negatives`` the locating term is the binary cross-entropy
    of each matched prompt's boundary vector against the one-hot gold index;
    without it only the gold-index log-probabilities enter. Labels typed
    ``UNTYPED`` add nothing to L1.
    """
    entries = labels.labels if isinstance(labels, AugmentedLabelSet) else list(labels)
    log_t, log_l, log_not_l, log_r, log_not_r = _log_probs(pred)
    null_type = log_t.shape[-1] - 1 if null_type is None else null_type
    n = log_l.shape[-1]

    type_rows, type_cols = [], []
    loc_rows, left_idx, right_idx = [], [], []
    for i, e in enumerate(entries):
        prompt = sigma[i]
        if e.is_null:
            type_rows.append(prompt)
            type_cols.append(null_type)
            continue
        _check_bounds(e, n)
        if e.t != UNTYPED:
            type_rows.append(prompt)
            type_cols.append(e.t)
        loc_rows.append(prompt)
        left_idx.append(e.l - 1)
        right_idx.append(e.r - 1)

    zero = log_t.sum() * 0.0
    l1 = -log_t[type_rows, type_cols].sum() if type_rows else zero
    if loc_rows:
        rows = torch.tensor(loc_rows)
        li, ri = torch.tensor(left_idx), torch.tensor(right_idx)
        l2 = -(log_l[rows, li].sum() + log_r[rows, ri].sum())
        if negatives:
            pos_l = torch.zeros(len(loc_rows), n, dtype=torch.bool)
            pos_l[torch.arange(len(loc_rows)), li] = True
            pos_r = torch.zeros(len(loc_rows), n, dtype=torch.bool)
            pos_r[torch.arange(len(loc_rows)), ri] = True
            l2 = l2 - log_not_l[rows].masked_fill(pos_l, 0.0).sum() - log_not_r[rows].masked_fill(pos_r, 0.0).sum()
    else:
        l2 = zero
    return l1, l2, weighted_sum([l1, l2], [lambda1, lambda2])
