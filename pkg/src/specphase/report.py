"""Matplotlib figure rendering for the CLI report paths (Agg, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_DPI = 120


def _save(fig, path):
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def save_analysis_figure(path, mag, phase, ifmap, weights) -> None:
    """Four-panel overview: log magnitude, phase, IF, and smoothness weights."""
    panels = [
        ("log1p magnitude", np.log1p(mag), "viridis"),
        ("phase [rad]", phase, "twilight"),
        ("instantaneous frequency [rad/hop]", ifmap, "twilight"),
        ("smoothness weights", weights, "magma"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    for ax, (title, grid, cmap) in zip(axes.ravel(), panels):
        im = ax.imshow(grid.T, origin="lower", aspect="auto", cmap=cmap)
        ax.set_title(title)
        ax.set_xlabel("frame")
        ax.set_ylabel("bin")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    _save(fig, path)


def save_loss_figure(path, losses) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(np.arange(len(losses)), losses, lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_convergence_figure(path, curves: dict) -> None:
    """Log spectral convergence per iteration, one labeled curve per init."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, (ks, log_sc) in curves.items():
        ax.plot(ks, log_sc, label=label, lw=1.2)
    ax.set_xlabel("Griffin-Lim iterations (k)")
    ax.set_ylabel("log spectral convergence")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def save_probe_figure(path, accuracies: dict) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    names = list(accuracies)
    values = [accuracies[n] for n in names]
    ax.bar(names, values, color="tab:blue")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("accuracy")
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=9)
    fig.tight_layout()
    _save(fig, path)
