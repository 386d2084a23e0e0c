"""Figure rendering for the CLI report path (headless, file output only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_cost_histogram(summary, path, title: str = "Sample cost distribution") -> None:
    """Render the Monte Carlo cost histogram to an image file."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    widths = np.diff(summary.hist_edges)
    ax.bar(summary.hist_edges[:-1], summary.hist_counts, width=widths,
           align="edge", edgecolor="black", linewidth=0.5)
    ax.axvline(summary.mean_cost, color="crimson", linestyle="--",
               label=f"mean = {summary.mean_cost:.4f}")
    ax.set_xlabel("sample cost")
    ax.set_ylabel("paths")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_trajectory(result, path, title: str = "Sample path") -> None:
    """Plot stored state trajectories of a single sample path."""
    if result.trajectory is None:
        raise ValueError("path was simulated without store_trajectory")
    tr = result.trajectory
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i in range(1, tr.shape[1]):
        ax.plot(tr[:, 0], tr[:, i], label=f"x{i}")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
