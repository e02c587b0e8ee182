"""Matplotlib renderings of pipeline outputs.

Every CLI command that emits data files also drops a PNG next to them:
image panels for reconstructions (observation / mean / std, plus truth
when available), loss curves for training histories, and a scene
montage for generated datasets.  Rendering is headless (Agg) and purely
cosmetic; the delimited and binary outputs remain the data of record.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 150
CMAP = "inferno"


def save_image_panel(path, panels, suptitle=None):
    """Render labeled images side by side with individual colorbars.

    ``panels`` is a sequence of (title, 2D array) pairs.
    """
    panels = [(title, np.asarray(img)) for title, img in panels]
    fig, axes = plt.subplots(
        1, len(panels), figsize=(3.2 * len(panels), 3.2), squeeze=False
    )
    for ax, (title, img) in zip(axes[0], panels):
        shown = ax.imshow(img, cmap=CMAP, interpolation="nearest")
        ax.set_title(title, fontsize=10)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(shown, ax=ax, fraction=0.046, pad=0.04)
    if suptitle:
        fig.suptitle(suptitle, fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_history_curves(path, history):
    """Loss components per epoch on a log scale, plus validation metrics
    when the history carries them."""
    epochs = [r.epoch for r in history.records]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    series = {
        "total": [r.train_loss.total for r in history.records],
        "label fit": [r.train_loss.label_fit for r in history.records],
        "physics fit": [r.train_loss.physics_fit for r in history.records],
        "prior fit": [r.train_loss.prior_fit for r in history.records],
        "weight penalty": [r.train_loss.weight_penalty for r in history.records],
    }
    for label, values in series.items():
        if any(v > 0 for v in values):
            ax.plot(epochs, values, label=label)
    val_mse = [r.val_mse for r in history.records]
    if any(np.isfinite(v) for v in val_mse):
        ax.plot(epochs, val_mse, linestyle="--", label="val mse")
    val_physics = [r.val_physics for r in history.records]
    if any(np.isfinite(v) for v in val_physics):
        ax.plot(epochs, val_physics, linestyle="--", label="val physics")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("per-sample loss")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def save_dataset_montage(path, ds, count=4):
    """First few samples of a dataset: source (when labeled) over
    observation."""
    count = min(count, len(ds))
    rows = 2 if ds.supervised else 1
    fig, axes = plt.subplots(
        rows, count, figsize=(2.4 * count, 2.4 * rows), squeeze=False
    )
    for j in range(count):
        sample = ds.samples[j]
        if ds.supervised:
            axes[0][j].imshow(sample.f, cmap=CMAP, interpolation="nearest")
            axes[0][j].set_title(f"source {j}", fontsize=9)
            axes[1][j].imshow(sample.g, cmap=CMAP, interpolation="nearest")
            axes[1][j].set_title(f"observed {j}", fontsize=9)
        else:
            axes[0][j].imshow(sample.g, cmap=CMAP, interpolation="nearest")
            axes[0][j].set_title(f"observed {j}", fontsize=9)
        for row in range(rows):
            axes[row][j].set_xticks([])
            axes[row][j].set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
