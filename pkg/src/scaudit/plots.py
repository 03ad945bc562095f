"""Figure rendering for optimizer histories and evaluation summaries.

Figures are written next to the delimited outputs so a run directory is
self-contained: history.csv + history.png, eval.csv + eval.png.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluator import EvalSummary
from .optimizer import GenerationStats


def plot_history(history: Sequence[GenerationStats], path: str | Path) -> None:
    """Best/mean fitness curves and the diversity trace, one figure."""
    gens = [h.generation for h in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(gens, [h.best_fitness for h in history], marker="o", label="best")
    ax1.plot(gens, [h.mean_fitness for h in history], marker="s", label="mean")
    ax1.set_ylabel("smoothed fitness")
    ax1.legend()
    ax1.grid(alpha=0.3)
    ax2.plot(gens, [h.diversity for h in history], marker="^", color="tab:green")
    ax2.set_xlabel("generation")
    ax2.set_ylabel("diversity")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_eval(summary: EvalSummary, path: str | Path) -> None:
    """Bar chart of the top-N accuracies plus MRR and MAP."""
    labels = [f"top-{k}" for k in summary.top_n] + ["MRR", "MAP"]
    values = list(summary.top_n.values()) + [summary.mrr, summary.map]
    fig, ax = plt.subplots(figsize=(7, 4))
    bars = ax.bar(labels, values, color="tab:blue")
    ax.bar_label(bars, fmt="%.3f")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
