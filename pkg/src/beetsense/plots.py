"""Report figures, rendered headlessly to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evaluation import METRIC_NAMES


def plot_history(history: list[dict], path: str | Path, title: str = "Reconstruction loss") -> None:
    """Train/test loss curves over epochs."""
    epochs = [h["epoch"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [h["train_loss"] for h in history], label="train", marker="o", markersize=3)
    ax.plot(epochs, [h["test_loss"] for h in history], label="test", marker="s", markersize=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean squared reconstruction error")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_curves(rows: list[dict], path: str | Path,
                title: str = "Metrics vs threshold alpha") -> None:
    """Precision/recall/F1 against the aggregation threshold."""
    alphas = [row["alpha"] for row in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, marker in (("precision", "o"), ("recall", "s"), ("f1", "^")):
        ax.plot(alphas, [row[name] for row in rows], label=name, marker=marker, markersize=4)
    ax.set_xlabel("threshold alpha")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_report(report: dict, path: str | Path, title: str = "Per-seed metrics") -> None:
    """Grouped bars: one group per metric, one bar per seed, mean overlaid."""
    per_seed = report["per_seed"]
    seeds = [entry["seed"] for entry in per_seed]
    width = 0.8 / max(len(seeds), 1)
    fig, ax = plt.subplots(figsize=(7.5, 4.5))
    for i, entry in enumerate(per_seed):
        offsets = [j + i * width for j in range(len(METRIC_NAMES))]
        ax.bar(offsets, [entry[m] for m in METRIC_NAMES], width=width,
               label=f"seed {entry['seed']}")
    centers = [j + width * (len(seeds) - 1) / 2 for j in range(len(METRIC_NAMES))]
    ax.plot(centers, [report["mean"][m] for m in METRIC_NAMES], color="black",
            linestyle="--", marker="D", markersize=5, label="mean")
    ax.set_xticks(centers)
    ax.set_xticklabels(METRIC_NAMES)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
