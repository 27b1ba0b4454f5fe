"""Matplotlib figure rendering for report outputs.

Every report-path command writes its figure next to the delimited output.
Figures use the Agg backend with pinned dpi and stripped metadata so a
rerun produces byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def save_histogram_figure(hist: dict[int, int], path: str | Path) -> None:
    """Bar chart of the one-to-n sequence distribution."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ns = sorted(hist) or [1]
    ax.bar(ns, [hist.get(n, 0) for n in ns], color="#3b6ea5", width=0.7)
    ax.set_xlabel("characters per stroke sequence (n)")
    ax.set_ylabel("sequence count")
    ax.set_xticks(ns)
    ax.set_title("one-to-n distribution")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_loss_curve(losses: list[float], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.plot(range(1, len(losses) + 1), losses, lw=1.0, color="#a53b3b")
    ax.set_xlabel("step")
    ax.set_ylabel("mean batch loss")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_attention_figure(maps: np.ndarray, strokes: str, path: str | Path) -> None:
    """One panel per decode step, heads averaged; last panel is the stop step."""
    steps = maps.shape[0]
    cols = min(steps, 6)
    rows = (steps + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(1.8 * cols, 1.9 * rows), squeeze=False)
    labels = list(strokes) + ["eos"]
    for i in range(rows * cols):
        ax = axes[i // cols][i % cols]
        ax.axis("off")
        if i < steps:
            ax.imshow(maps[i].mean(axis=0), cmap="viridis", interpolation="nearest")
            ax.set_title(labels[i] if i < len(labels) else "?", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_trace_figure(trace_counts: dict[str, int], path: str | Path) -> None:
    """Bar chart of the four rectification/emission trace buckets."""
    keys = ["exact_direct", "exact_matched", "rectified_direct", "rectified_matched"]
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.bar(range(len(keys)), [trace_counts.get(k, 0) for k in keys], color="#3b8a5a", width=0.6)
    ax.set_xticks(range(len(keys)))
    ax.set_xticklabels([k.replace("_", "\n") for k in keys], fontsize=8)
    ax.set_ylabel("test samples")
    ax.set_title("resolution traces")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
