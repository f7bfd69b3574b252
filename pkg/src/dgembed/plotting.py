"""Static figures for the CLI report path (heatmaps and loss curves).

Rendering goes through the Agg backend so nothing needs a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-stable
_PNG_METADATA = {"Software": None}


def _finish(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_PNG_METADATA)
    plt.close(fig)
    return path


def plot_matrix(matrix: np.ndarray, path, title: str = "", lower_only: bool = False) -> Path:
    """Heatmap of an L x L attention-style matrix; axes are window positions."""
    matrix = np.asarray(matrix, dtype=float)
    shown = np.ma.masked_where(~np.tril(np.ones_like(matrix, dtype=bool)), matrix) if lower_only else matrix
    fig, ax = plt.subplots(figsize=(3.6, 3.0))
    im = ax.imshow(shown, cmap="viridis", interpolation="nearest")
    L = matrix.shape[0]
    ax.set_xticks(range(L))
    ax.set_yticks(range(L))
    ax.set_xlabel("key position j")
    ax.set_ylabel("query position i")
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return _finish(fig, path)


def plot_history(train_loss, val_loss, path, best_epoch: int | None = None, title: str = "") -> Path:
    epochs = np.arange(1, len(train_loss) + 1)
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    ax.plot(epochs, train_loss, label="train", lw=1.2)
    ax.plot(epochs, val_loss, label="validation", lw=1.2)
    if best_epoch:
        ax.axvline(best_epoch, color="0.5", ls=":", lw=1)
    ax.set_xlabel("epoch")
    ax.set_ylabel("triplet loss")
    ax.set_yscale("log")
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    ax.legend(frameon=False, fontsize=8)
    if title:
        ax.set_title(title, fontsize=9)
    return _finish(fig, path)
