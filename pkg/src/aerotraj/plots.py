"""Figure rendering for the report paths: per-class statistics bars and
event histograms, written as PNG files next to the delimited output.

Rendering is deterministic (fixed dpi, Agg backend, no metadata) so repeated
runs produce byte-identical images.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 120
_SAVE_KWARGS = {"dpi": DPI, "metadata": {"Software": None}}


def _save(fig, path):
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def class_stats_figures(stats, out_dir) -> list[str]:
    """Bar charts of mean duration / distance / speed per object class."""
    categories = [s.category for s in stats]
    panels = [
        ("mean_duration", "Mean trajectory duration [s]", "stats_duration.png"),
        ("mean_distance", "Mean trajectory distance [m]", "stats_distance.png"),
        ("mean_speed", "Mean speed [m/s]", "stats_speed.png"),
    ]
    written = []
    for attr, label, name in panels:
        fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(categories) + 1.5), 3.2))
        values = [getattr(s, attr) for s in stats]
        ax.bar(np.arange(len(categories)), values, color="#3b7dd8")
        ax.set_xticks(np.arange(len(categories)))
        ax.set_xticklabels(categories, rotation=30, ha="right")
        ax.set_ylabel(label)
        ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        path = str(out_dir / name) if hasattr(out_dir, "joinpath") else f"{out_dir}/{name}"
        _save(fig, path)
        written.append(path)
    return written


def _hist_panel(ax, hist, xlabel, color):
    widths = hist.bin_right - hist.bin_left
    ax.bar(hist.bin_left, hist.counts, width=widths, align="edge",
           color=color, edgecolor="white")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.grid(axis="y", alpha=0.3)


def ttc_pet_figure(ttc_hist, pet_hist, path) -> None:
    """Side-by-side distribution of TTC and PET of mined critical scenarios."""
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2))
    if ttc_hist is not None:
        _hist_panel(axes[0], ttc_hist, "TTC [s]", "#c23b3b")
    else:
        axes[0].set_axis_off()
        axes[0].text(0.5, 0.5, "no TTC events", ha="center", va="center")
    if pet_hist is not None:
        _hist_panel(axes[1], pet_hist, "PET [s]", "#d88a3b")
    else:
        axes[1].set_axis_off()
        axes[1].text(0.5, 0.5, "no PET events", ha="center", va="center")
    fig.tight_layout()
    _save(fig, path)


def parking_figure(time_hist, switch_hist, path) -> None:
    """Time-to-park distribution and direction-switch counts."""
    fig, axes = plt.subplots(1, 2, figsize=(8.0, 3.2))
    if time_hist is not None:
        _hist_panel(axes[0], time_hist, "time to park [s]", "#3b8a4e")
    else:
        axes[0].set_axis_off()
        axes[0].text(0.5, 0.5, "no parking events", ha="center", va="center")
    if switch_hist is not None:
        _hist_panel(axes[1], switch_hist, "direction switches", "#7a59b0")
    else:
        axes[1].set_axis_off()
        axes[1].text(0.5, 0.5, "no parking events", ha="center", va="center")
    fig.tight_layout()
    _save(fig, path)
