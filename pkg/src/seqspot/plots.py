"""Figure rendering for the report outputs, written next to the TSVs."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import ComparisonRow, RocCurve


def save_roc_figure(curves: dict[str, RocCurve], path, fa_target: float | None = None,
                    max_fa_per_hour: float = 5.0) -> None:
    """ROC curves (FRR vs FA/hour); lower is better."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for label, curve in curves.items():
        keep = curve.fa_per_hour <= max_fa_per_hour
        ax.plot(curve.fa_per_hour[keep], 100.0 * curve.frr[keep], label=label)
    if fa_target is not None:
        ax.axvline(fa_target, color="grey", linestyle=":", linewidth=1)
    ax.set_xlabel("False alarms per hour")
    ax.set_ylabel("False reject rate (%)")
    ax.grid(alpha=0.3)
    if curves:
        ax.legend()
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def save_training_figure(metrics, path) -> None:
    """Loss and dev FRR trajectories across epochs."""
    epochs = [m.epoch for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(epochs, [m.train_loss for m in metrics], label="train loss")
    ax1.plot(epochs, [m.dev_loss for m in metrics], label="dev loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.grid(alpha=0.3)
    ax1.legend()
    ax2.plot(epochs, [100.0 * m.dev_frr_at_target for m in metrics], color="tab:red")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("dev FRR (%) at FA target")
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def save_smoothing_figure(ns: Sequence[int], frrs: Sequence[float], path) -> None:
    """FRR at the FA target as a function of the smoothing window."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(list(ns), [100.0 * f for f in frrs], marker="o")
    ax.set_xlabel("smoothing frames")
    ax.set_ylabel("FRR (%) at FA target")
    ax.grid(alpha=0.3)
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)


def save_size_tradeoff_figure(rows: Sequence[ComparisonRow], path) -> None:
    """Model size against FRR for an encoder sweep."""
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for row in rows:
        ax.scatter(row.params_k, 100.0 * row.frr)
        ax.annotate(row.model, (row.params_k, 100.0 * row.frr), fontsize=8,
                    xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("parameters (K)")
    ax.set_ylabel("FRR (%) at FA target")
    ax.grid(alpha=0.3)
    fig.savefig(path, bbox_inches="tight", dpi=120)
    plt.close(fig)
