import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from image_io import atomic_output  # noqa: E402

LOSS_PANELS = (
    ("pixel", "Pixel loss"),
    ("ssim", "SSIM loss"),
    ("total", "Total loss"),
)


def smooth_history(history: pd.DataFrame, every=10):
    """Average consecutive groups of `every` iterations."""
    groups = (history["iteration"] - 1) // every
    return history.groupby(groups).mean().reset_index(drop=True)


def plot_loss_panel(ax, history: pd.DataFrame, column, title=None, every=10):
    """Plot one loss column against iterations"""
    if column not in history.columns:
        logging.error("Column '%s' not found in loss history.", column)
        return
    smoothed = smooth_history(history, every)
    ax.plot(smoothed["iteration"], smoothed[column], marker=".", linewidth=1)
    ax.set_title(title or column)
    ax.set_xlabel("Iteration")
    ax.set_ylabel("Loss")
    ax.grid(True, alpha=0.3)


def plot_loss_curves(history: pd.DataFrame, path, every=10):
    """Pixel, SSIM and total loss side by side; each point averages `every` iterations."""
    if history.empty:
        logging.error("Loss history is empty; nothing to plot.")
        return None
    if "iteration" not in history.columns:
        logging.error("Required column 'iteration' not found in loss history.")
        return None

    fig, axes = plt.subplots(1, len(LOSS_PANELS), figsize=(15, 4))
    for ax, (column, title) in zip(axes, LOSS_PANELS):
        plot_loss_panel(ax, history, column, title, every)
    fig.tight_layout()
    with atomic_output(path) as tmp:
        fig.savefig(tmp, format="png", bbox_inches="tight", dpi=150)
    plt.close(fig)
    logging.info("Generated loss curves: %s", path)
    return str(path)
