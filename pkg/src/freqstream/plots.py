"""Static SVG line plots of predictions against targets."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# stable ids and no timestamp so reruns write identical files
plt.rcParams["svg.hashsalt"] = "freqstream"


def prediction_plot(path: str | Path, depth: np.ndarray, target: np.ndarray, predictions: dict[str, np.ndarray],
                    title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(4.0, 7.0))
    ax.plot(target, depth, color="black", lw=1.0, label="RT")
    for name, pred in predictions.items():
        ax.plot(pred, depth, lw=0.8, label=name)
    ax.invert_yaxis()
    ax.set_xlabel("resistivity")
    ax.set_ylabel("depth (m)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7, loc="best")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def loss_plot(path: str | Path, losses: list[float], val_r2: list[float] | None = None) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.0))
    epochs = np.arange(1, len(losses) + 1)
    ax.plot(epochs, losses, label="training MAE")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    if val_r2 is not None:
        ax2 = ax.twinx()
        ax2.plot(epochs, val_r2, color="tab:orange", label="validation R2")
        ax2.set_ylabel("validation R2")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
