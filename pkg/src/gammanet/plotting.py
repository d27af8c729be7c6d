"""Matplotlib renderings of the analysis outputs, written as PNG files."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 130,
}


def _grid(n: int, ncols: int = 4):
    ncols = max(1, min(ncols, n))
    nrows = math.ceil(n / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(2.8 * ncols, 2.4 * nrows), squeeze=False)
    for ax in axes.flat[n:]:
        ax.set_visible(False)
    return fig, axes.flat


def _save(fig, path: str | Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def plot_spectra(entries, path: str | Path) -> Path:
    """Descending singular values, one panel per scan axis, one line per layer."""
    with plt.rc_context(STYLE):
        axes_names = sorted({e.axis for e in entries}, key=lambda a: (a != "space", a))
        fig, axs = plt.subplots(1, max(1, len(axes_names)), figsize=(4.0 * max(1, len(axes_names)), 3.0),
                                squeeze=False)
        for ax, name in zip(axs[0], axes_names):
            for e in (e for e in entries if e.axis == name):
                ax.plot(np.arange(len(e.sigma)), e.sigma, lw=1.2, label=f"layer {e.layer}")
            ax.axhline(1.0, color="0.5", ls="--", lw=0.8)
            ax.set_title(f"{name} scan")
            ax.set_xlabel("rank")
            ax.set_ylabel("singular value")
            ax.legend(frameon=False)
        return _save(fig, path)


def plot_adjacency(matrix: np.ndarray, assignment_in_order: np.ndarray, path: str | Path,
                   title: str = "") -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.8))
        im = ax.imshow(matrix, cmap="viridis", interpolation="nearest")
        bounds = np.nonzero(np.diff(assignment_in_order))[0] + 0.5
        for b in bounds:
            ax.axhline(b, color="w", lw=0.5)
            ax.axvline(b, color="w", lw=0.5)
        ax.set_title(title or "reordered attention adjacency")
        ax.set_xlabel("node (community order)")
        ax.set_ylabel("node (community order)")
        fig.colorbar(im, ax=ax, shrink=0.8)
        return _save(fig, path)


def plot_peak_fits(fits: Sequence, path: str | Path, max_panels: int = 16) -> Path:
    shown = list(fits)
    if len(shown) > max_panels:
        step = math.ceil(len(shown) / max_panels)
        shown = shown[::step]
    with plt.rc_context(STYLE):
        fig, axs = _grid(max(1, len(shown)))
        for ax, f in zip(axs, shown):
            x, y = f.pairs[:, 0], f.pairs[:, 1]
            ax.scatter(x, y, s=8, alpha=0.7)
            xs = np.linspace(x.min(), x.max(), 2)
            ax.plot(xs, f.slope * xs + f.intercept, color="tab:red", lw=1.0)
            ax.set_title(f"node {f.node}: y={f.slope:.2f}x{f.intercept:+.1f}, R²={f.r2:.2f}")
            ax.set_xlabel("true peak")
            ax.set_ylabel("predicted peak")
        return _save(fig, path)


def plot_traces(true: np.ndarray, pred: np.ndarray, nodes: Sequence[int], path: str | Path) -> Path:
    """Observed vs forecast series; ``true``/``pred`` are [L, N]."""
    with plt.rc_context(STYLE):
        fig, axs = _grid(len(nodes), ncols=2)
        for ax, n in zip(axs, nodes):
            ax.plot(true[:, n], lw=0.7, label="observed")
            ax.plot(pred[:, n], lw=0.7, label="forecast")
            ax.set_title(f"node {n}")
            ax.set_xlabel("step")
        axs[0].legend(frameon=False)
        return _save(fig, path)


def plot_history(history: Sequence, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.0))
        ep = [r.epoch for r in history]
        ax.plot(ep, [r.train_loss for r in history], label="train loss (MAE)")
        ax.plot(ep, [r.val_mae for r in history], label="validation MAE")
        ax.set_xlabel("epoch")
        ax.legend(frameon=False)
        return _save(fig, path)
