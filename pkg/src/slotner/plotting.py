"""Figures written next to the delimited reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_curve(history: Sequence[dict], path: str | Path) -> Path:
    """Loss terms and learning rate per step."""
    with plt.rc_context(RC):
        fig, (ax, ax_lr) = plt.subplots(2, 1, figsize=(5.0, 4.2), sharex=True,
                                        gridspec_kw={"height_ratios": [3, 1]})
        steps = [r["step"] for r in history]
        for key, style in (("L", "-"), ("L1", "--"), ("L2", ":")):
            ax.plot(steps, [r[key] for r in history], style, lw=1.0, label=key)
        ax.set_yscale("log")
        ax.set_ylabel("loss per sentence")
        ax.legend(frameon=False)
        ax_lr.plot(steps, [r["lr"] for r in history], color="0.3", lw=1.0)
        ax_lr.set_ylabel("lr")
        ax_lr.set_xlabel("step")
        return _save(fig, path)


def plot_sweep(axis: str, results: Sequence[tuple[int, object]], path: str | Path) -> Path:
    """F1 (and locating F1) against the swept value."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        xs = [v for v, _ in results]
        ax.plot(xs, [r.f1 for _, r in results], "o-", label="F1")
        ax.plot(xs, [r.loc_f1 for _, r in results], "s--", label="locating F1")
        ax.set_xlabel({"M": "number of prompts", "I": "interaction layers"}.get(axis, axis))
        ax.set_ylabel("score")
        ax.set_xticks(xs)
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_report(report, path: str | Path) -> Path:
    """Bar chart of overall, subtask and per-type scores."""
    with plt.rc_context(RC):
        rows = report.rows()
        fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(rows) + 1), 3.0))
        names = [n for n, _ in rows]
        ax.bar(range(len(rows)), [v for _, v in rows], color="0.55")
        ax.set_xticks(range(len(rows)))
        ax.set_xticklabels(names, rotation=45, ha="right")
        ax.set_ylim(0, 1.02)
        return _save(fig, path)


def plot_ablation(rows: Sequence[tuple[str, float]], path: str | Path) -> Path:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        ax.barh([n for n, _ in rows][::-1], [v for _, v in rows][::-1], color="0.55")
        ax.set_xlim(0, 1.0)
        ax.set_xlabel("F1")
        return _save(fig, path)
