"""Figures written next to the training report and the evaluation table."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps reruns byte-stable
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_training(records: Sequence, path) -> Path:
    """Mean loss and mean episode reward per epoch, side by side."""
    epochs = [r.epoch for r in records]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_reward) = plt.subplots(1, 2, figsize=(6.4, 2.6))
        ax_loss.plot(epochs, [r.mean_loss for r in records], color="tab:red", lw=1.2)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("mean loss")
        ax_reward.plot(epochs, [r.mean_reward for r in records], color="tab:blue", lw=1.2)
        ax_reward.set_xlabel("epoch")
        ax_reward.set_ylabel("mean token accuracy")
        ax_reward.set_ylim(0, 1.02)
        return _save(fig, path)


def plot_eval(result, path) -> Path:
    """Per chunk type precision, recall and F1 as grouped bars."""
    from searchtag.corpus import type_scores

    scores = type_scores(result)
    kinds = list(scores)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.2, 0.7 * len(kinds) + 1.5), 2.6))
        width = 0.26
        for offset, (label, idx, color) in enumerate(
            (("precision", 0, "tab:blue"), ("recall", 1, "tab:orange"), ("F1", 2, "tab:green"))
        ):
            xs = [k + (offset - 1) * width for k in range(len(kinds))]
            ax.bar(xs, [100 * scores[kind][idx] for kind in kinds], width, label=label, color=color)
        ax.set_xticks(range(len(kinds)))
        ax.set_xticklabels(kinds)
        ax.set_ylim(0, 105)
        ax.set_ylabel("%")
        ax.set_title(f"accuracy {100 * result.accuracy:.2f}%  F1 {100 * result.f1:.2f}%")
        ax.legend(loc="lower right", frameon=False)
        return _save(fig, path)
