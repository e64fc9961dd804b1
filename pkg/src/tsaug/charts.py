"""SVG figures for the command-line reports.

Figures are built on :class:`matplotlib.figure.Figure` directly (no pyplot
state). SVG ids are salted with a fixed string and the date metadata is
dropped, so the same data always produces the same bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

SVG_SALT = "tsaug"


def _save(fig: Figure, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None})


def overlay_chart(original: np.ndarray, augmented: np.ndarray, path: Path, title: str = "") -> None:
    """Input in red and augmented series in green, one panel per channel."""
    channels = original.shape[1]
    fig = Figure(figsize=(6.0, 1.8 * channels + 0.6))
    axes = fig.subplots(channels, 1, squeeze=False)[:, 0]
    steps = np.arange(original.shape[0])
    for c, ax in enumerate(axes):
        ax.plot(steps, original[:, c], color="tab:red", linewidth=1.2, label="input")
        ax.plot(steps, augmented[:, c], color="tab:green", linewidth=1.2, label="augmented")
        ax.set_ylabel(f"ch{c}")
    axes[0].legend(loc="upper right", fontsize="small")
    axes[-1].set_xlabel("t")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def trajectory_chart(matrix: np.ndarray, path: Path, labels: Sequence[str] = ()) -> None:
    """Selection probability of every sub-policy against epoch."""
    fig = Figure(figsize=(7.0, 4.0))
    ax = fig.subplots()
    epochs = np.arange(matrix.shape[0])
    for k in range(matrix.shape[1]):
        label = labels[k] if k < len(labels) else f"sub-policy {k}"
        ax.plot(epochs, matrix[:, k], linewidth=1.0, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("selection probability")
    ax.legend(loc="center left", bbox_to_anchor=(1.0, 0.5), fontsize="x-small")
    fig.tight_layout()
    _save(fig, path)


def scatter_chart(x: Sequence[float], delta: Sequence[float], path: Path, xlabel: str) -> None:
    """Metric on x, test-accuracy delta as colour."""
    fig = Figure(figsize=(5.0, 4.0))
    ax = fig.subplots()
    points = ax.scatter(np.asarray(x), np.asarray(delta), c=np.asarray(delta), cmap="viridis", s=18)
    fig.colorbar(points, ax=ax, label="test accuracy delta")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("test accuracy delta")
    fig.tight_layout()
    _save(fig, path)


def line_chart(
    xs: Sequence[float],
    series: Dict[str, Sequence[float]],
    path: Path,
    xlabel: str,
    ylabel: str = "accuracy",
) -> None:
    fig = Figure(figsize=(5.0, 3.5))
    ax = fig.subplots()
    for name, ys in series.items():
        ax.plot(np.asarray(xs), np.asarray(ys), marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
