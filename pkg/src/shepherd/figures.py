"""Matplotlib figure rendering for reports, dataset stats, and calibration.

All figures are written to files (Agg backend, no display); every report
path emits its figures next to the delimited output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

plt.rcParams.update({"figure.dpi": 120, "savefig.dpi": 150, "font.size": 9})


def save_cost_accuracy(rows, path: str | Path) -> Path:
    """Scatter of total cost vs accuracy, one point per strategy."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for row in rows:
        ax.scatter(float(row.cost), row.accuracy, s=36)
        ax.annotate(row.strategy, (float(row.cost), row.accuracy), fontsize=7, xytext=(4, 3), textcoords="offset points")
    ax.set_xlabel("total cost ($)")
    ax.set_ylabel("accuracy (%)")
    ax.set_title("cost vs accuracy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_ace_bars(rows, path: str | Path) -> Path:
    """Bar chart of accuracy-per-cost efficiency per strategy."""
    path = Path(path)
    labeled = [(r.strategy, r.ace) for r in rows if r.ace is not None]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    if labeled:
        names, values = zip(*labeled)
        ax.bar(range(len(names)), values)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=30, ha="right", fontsize=7)
        ax.axhline(1.0, color="gray", linestyle="--", linewidth=0.8)
    ax.set_ylabel("ACE")
    ax.set_title("accuracy-per-cost efficiency")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_hint_histogram(stats, path: str | Path) -> Path:
    """Distribution of minimum hint sizes: no-hint mass, percentage buckets,
    and the unsolvable tail."""
    path = Path(path)
    buckets = sorted(stats.bucket_masses)
    labels = ["0%"] + [f"{p}%" for p in buckets] + ["full"]
    masses = [stats.p_zero] + [stats.bucket_masses[p] for p in buckets] + [stats.p_unsolvable]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(labels)), masses)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("share of queries")
    ax.set_xlabel("minimum hint size (fraction of full response)")
    ax.set_title("minimum hint size distribution")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_frontier(frontier, path: str | Path, chosen=None) -> Path:
    """Cost-accuracy frontier of the calibration grid, with the selected
    operating point marked."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5.5, 4))
    xs = [float(c.cost) for c in frontier]
    ys = [c.accuracy * 100 for c in frontier]
    ax.scatter(xs, ys, s=6, alpha=0.4, label="grid")
    if chosen is not None and chosen.cost is not None:
        ax.scatter([float(chosen.cost)], [chosen.accuracy * 100], s=60, marker="*", color="red", label="selected")
        ax.legend(fontsize=7)
    ax.set_xlabel("validation cost ($)")
    ax.set_ylabel("validation accuracy (%)")
    ax.set_title("calibration grid")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
