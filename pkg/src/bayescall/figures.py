"""Matplotlib rendering of confidence histograms next to the CSV exports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import Histogram

__all__ = ["save_histogram_figure", "save_comparison_figure"]

_XLABEL = "predicted probability of class 1 (somatic)"


def _bars(ax, hist: Histogram, title: str) -> None:
    widths = hist.edges[1:] - hist.edges[:-1]
    ax.bar(hist.edges[:-1], hist.counts, width=widths, align="edge",
           color="#4878a8", edgecolor="white", linewidth=0.5)
    ax.set_xlim(hist.edges[0], hist.edges[-1])
    ax.set_xlabel(_XLABEL)
    ax.set_ylabel("count")
    ax.set_title(title)


def save_histogram_figure(hist: Histogram, title: str, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    _bars(ax, hist, title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_comparison_figure(hist_in: Histogram, hist_masked: Histogram,
                           path) -> None:
    """Side-by-side in-distribution vs. masked confidence histograms."""
    fig, axes = plt.subplots(1, 2, figsize=(11, 4), sharey=True)
    _bars(axes[0], hist_in, "in-distribution")
    _bars(axes[1], hist_masked, "masked (out-of-distribution)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
