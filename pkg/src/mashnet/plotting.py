"""Figures written next to training logs and evaluation reports."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_training(history, path, title=None):
    epochs = [h["epoch"] for h in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [h["train_loss"] for h in history], marker="o", label="train")
    ax_loss.plot(epochs, [h["val_loss"] for h in history], marker="o", label="validation")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("LSRO loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [h["val_accuracy"] for h in history], marker="o", color="tab:green")
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("validation accuracy (pos/neg)")
    ax_acc.set_ylim(0, 1.02)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_ranks(rows, path):
    """Histogram of per-seed ranks for each system; ``rows`` as passed to ``write_report``."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    max_rank = max(max(rep.ranks) for _, rep in rows)
    bins = np.arange(1, max_rank + 2) - 0.5
    for name, rep in rows:
        ax.hist(rep.ranks, bins=bins, histtype="step", linewidth=1.5,
                label=f"{name} (mean {rep.average_rank:.2f})")
    ax.set_xlabel("rank of the original among matched candidates")
    ax.set_ylabel("vocal seeds")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
