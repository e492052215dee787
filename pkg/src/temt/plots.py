"""Matplotlib figure rendering for the CLI report paths.

Every function writes a PNG next to the delimited/JSON output it
illustrates and returns the path it wrote.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .attribution import AttributionReport
from .corpus import CorpusStats

_CLASS_COLORS = {0: "tab:blue", 1: "tab:red"}
_CLASS_NAMES = {0: "control", 1: "positive"}


def save_gap_histogram(stats: CorpusStats, path: str | Path) -> Path:
    """Per-class histogram of user-level mean inter-post gaps (hours)."""
    path = Path(path)
    fig, (ax_posts, ax_gaps) = plt.subplots(1, 2, figsize=(9, 3.5))

    for cls in (0, 1):
        sel = stats.labels == cls
        if not sel.any():
            continue
        ax_posts.hist(stats.posts_per_user[sel], bins=30, alpha=0.55,
                      color=_CLASS_COLORS[cls], label=_CLASS_NAMES[cls])
        gaps = stats.user_mean_gap_hours[sel]
        gaps = gaps[np.isfinite(gaps)]
        if gaps.size:
            ax_gaps.hist(gaps, bins=30, alpha=0.55,
                         color=_CLASS_COLORS[cls], label=_CLASS_NAMES[cls])

    ax_posts.set_xlabel("posts per user")
    ax_posts.set_ylabel("users")
    ax_posts.legend()
    ax_gaps.set_xlabel("mean gap between posts (hours)")
    ax_gaps.set_ylabel("users")
    ax_gaps.legend()
    fig.suptitle("corpus posting behavior")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_training_curves(log_records: list[dict], path: str | Path) -> Path:
    """Loss and validation F1 per epoch, with the LR schedule overlaid."""
    path = Path(path)
    epochs = [r["epoch"] for r in log_records]
    loss = [r["mean_loss"] for r in log_records]
    lr = [r["lr_last"] for r in log_records]
    val = [(r["epoch"], r["val_f1"]) for r in log_records if r.get("val_f1") is not None]

    fig, (ax_loss, ax_lr) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    ax_loss.plot(epochs, loss, color="tab:blue", label="train loss")
    ax_loss.set_ylabel("loss")
    if val:
        ax_f1 = ax_loss.twinx()
        ax_f1.plot([e for e, _ in val], [f for _, f in val], color="tab:green", label="val F1")
        ax_f1.set_ylabel("val F1")
        ax_f1.set_ylim(0, 1.05)
    ax_loss.legend(loc="upper left")
    ax_lr.plot(epochs, lr, color="tab:orange")
    ax_lr.set_ylabel("learning rate")
    ax_lr.set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_sweep_grid(rows: list[dict], path: str | Path) -> Path:
    """Test F1 against window size, one line per positional mode."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 4))
    modes = sorted({r["positional_mode"] for r in rows})
    for mode in modes:
        pts = sorted((r["window_size"], r["f1"]) for r in rows if r["positional_mode"] == mode)
        ax.plot([k for k, _ in pts], [f for _, f in pts], marker="o", label=mode)
    ax.set_xscale("log", base=2)
    ax.set_xticks(sorted({r["window_size"] for r in rows}))
    ax.get_xaxis().set_major_formatter(plt.ScalarFormatter())
    ax.set_xlabel("window size K")
    ax.set_ylabel("test F1")
    ax.set_ylim(0, 1.05)
    ax.legend(title="positional mode")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_attribution_chart(report: AttributionReport, path: str | Path) -> Path:
    """Ranked bar chart of per-post attribution scores."""
    path = Path(path)
    scores = [report.post_scores[slot] for slot in report.ranking]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    colors = ["tab:red" if s > 0 else "tab:blue" for s in scores]
    ax.bar(range(1, len(scores) + 1), scores, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xlabel("post rank")
    ax.set_ylabel("attribution")
    ax.set_title(f"user {report.user_id}: p={report.predicted_probability:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_probability_histogram(mean_probs: np.ndarray, labels: np.ndarray, path: str | Path) -> Path:
    """Distribution of per-user mean vote probabilities, split by true class."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bins = np.linspace(0.0, 1.0, 31)
    for cls in (0, 1):
        sel = labels == cls
        if sel.any():
            ax.hist(mean_probs[sel], bins=bins, alpha=0.55,
                    color=_CLASS_COLORS[cls], label=_CLASS_NAMES[cls])
    ax.axvline(0.5, color="black", linewidth=0.8, linestyle="--")
    ax.set_xlabel("mean vote probability")
    ax.set_ylabel("users")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
