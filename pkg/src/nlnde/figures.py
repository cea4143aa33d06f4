"""Rendered companions to the delimited outputs.

Every report-producing command also drops a PNG next to its TSV: training
curves beside the epoch log, a heatmap beside the confusion matrix, and a
token-by-source heatmap beside the attention weight table.  Rendering is
deterministic: fixed sizes, no timestamps, no generator metadata.
"""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)
import numpy as np  # noqa: E402

from .distant import ConfusionMatrix  # noqa: E402
from .errors import ConfigError  # noqa: E402
from .trainer import TrainReport  # noqa: E402

__all__ = ["training_curves", "confusion_heatmap", "attention_heatmap"]

_SAVE = {"dpi": 120, "metadata": {"Software": None}}


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def training_curves(report: TrainReport, path: str | Path) -> Path:
    """Loss per epoch on the left, development scores on the right."""
    if not report.epochs:
        raise ConfigError("cannot plot an empty training report")
    epochs = [e.epoch for e in report.epochs]
    fig, (ax_loss, ax_dev) = plt.subplots(1, 2, figsize=(10, 4))

    ax_loss.plot(epochs, [e.clean_loss for e in report.epochs], marker="o", label="clean")
    if any(e.noisy_loss is not None for e in report.epochs):
        ax_loss.plot(
            epochs,
            [e.noisy_loss if e.noisy_loss is not None else np.nan for e in report.epochs],
            marker="s",
            label="noisy",
        )
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_loss.set_title(f"{report.run_id} training loss")

    ax_dev.plot(epochs, [e.dev_precision for e in report.epochs], label="precision")
    ax_dev.plot(epochs, [e.dev_recall for e in report.epochs], label="recall")
    ax_dev.plot(epochs, [e.dev_f1 for e in report.epochs], marker="o", label="F1")
    ax_dev.axvline(report.best_epoch, color="grey", linestyle=":", label="best epoch")
    ax_dev.set_xlabel("epoch")
    ax_dev.set_ylabel("score")
    ax_dev.set_ylim(-0.02, 1.02)
    ax_dev.legend()
    ax_dev.set_title("development set")
    return _finish(fig, path)


def confusion_heatmap(confusion: ConfusionMatrix, path: str | Path) -> Path:
    """Row-normalized label confusion, true labels down the side."""
    probs = confusion.probs
    n = probs.shape[0]
    fig, ax = plt.subplots(figsize=(max(5.0, 0.7 * n + 2), max(4.0, 0.7 * n + 1.5)))
    image = ax.imshow(probs, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n), confusion.labels, rotation=90)
    ax.set_yticks(range(n), confusion.labels)
    ax.set_xlabel("observed label")
    ax.set_ylabel("true label")
    fig.colorbar(image, ax=ax, label="p(observed | true)")
    if n <= 12:
        for i in range(n):
            for j in range(n):
                ax.text(
                    j, i, f"{probs[i, j]:.2f}",
                    ha="center", va="center",
                    color="white" if probs[i, j] < 0.5 else "black",
                    fontsize=7,
                )
    return _finish(fig, path)


def attention_heatmap(
    tokens: Sequence[str],
    weights: np.ndarray,
    sources: Sequence[str],
    path: str | Path,
    max_tokens: int = 60,
) -> Path:
    """Per-token source weights, one row per embedding source."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 2 or weights.shape != (len(tokens), len(sources)):
        raise ConfigError(
            f"weights shape {weights.shape} does not match "
            f"{len(tokens)} tokens x {len(sources)} sources"
        )
    if len(tokens) == 0:
        raise ConfigError("cannot plot attention over zero tokens")
    tokens = list(tokens)[:max_tokens]
    weights = weights[: len(tokens)]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.3 * len(tokens) + 2), 0.6 * len(sources) + 1.8))
    image = ax.imshow(weights.T, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(tokens)), tokens, rotation=90, fontsize=7)
    ax.set_yticks(range(len(sources)), sources)
    fig.colorbar(image, ax=ax, label="attention weight")
    return _finish(fig, path)
