"""Figure rendering for the reporting paths: every command that writes a
plot-ready CSV also renders the corresponding figure next to it."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 130


def save_training_curves(log, path: str, title: str = "training"):
    """Loss and validation-metric curves from a trainer metrics log."""
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.4))
    for split in ("train", "val"):
        series = log.series(split, "loss")
        if series:
            xs, ys = zip(*series)
            axes[0].plot(xs, ys, label=f"{split} loss")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend()
    metric_names = {m for _, s, m, _ in log.rows if s == "val" and m != "loss"}
    for m in sorted(metric_names):
        xs, ys = zip(*log.series("val", m))
        axes[1].plot(xs, ys, label=f"val {m}")
    axes[1].set_xlabel("epoch")
    axes[1].legend()
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def save_scatter(pred, true, path: str, xlabel: str = "true", ylabel: str = "predicted", title: str = ""):
    fig, ax = plt.subplots(figsize=(4.2, 4))
    ax.scatter(true, pred, s=14, alpha=0.7)
    lo = min(np.min(true), np.min(pred))
    hi = max(np.max(true), np.max(pred))
    ax.plot([lo, hi], [lo, hi], color="gray", lw=0.8, ls="--")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def save_loss_curves(curves: dict[str, tuple[list, list]], path: str, title: str = "optimizee training loss"):
    """One line per optimizer: x = inner step, y = loss."""
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    for name, (xs, ys) in curves.items():
        ax.plot(xs, ys, label=name)
    ax.set_xlabel("inner step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)


def save_image_pair(target: np.ndarray, recon: np.ndarray, path: str):
    fig, axes = plt.subplots(1, 2, figsize=(5.4, 2.8))
    for ax, img, name in zip(axes, (target, recon), ("target", "reconstruction")):
        ax.imshow(img, cmap="gray", vmin=0, vmax=1)
        ax.set_title(name)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
