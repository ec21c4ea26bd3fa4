"""Report assembly: CSV tables and SVG figures from pipeline artifacts.

Figures are emitted as SVG alongside the CSV that feeds them, so downstream
checks parse data, never images.  Matplotlib output is made deterministic by
pinning the hash salt and dropping the date metadata.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("svg")
matplotlib.rcParams["svg.hashsalt"] = "cbfpipe"

import matplotlib.pyplot as plt
import numpy as np


def write_csv(path, header: list[str], rows: list[list]) -> None:
    from pathlib import Path

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, float):
                cells.append(repr(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _save_svg(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_rho_sweep(rhos, sw_rmse, rmse, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(rhos, sw_rmse, "o-", label="safety-weighted RMSE")
    ax.plot(rhos, rmse, "s--", label="test RMSE")
    ax.set_xlabel("removal fraction")
    ax.set_ylabel("RMSE")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_svg(fig, path)


def influence_histogram(scores: np.ndarray, threshold: float, n_bins: int = 30):
    counts, edges = np.histogram(np.asarray(scores, dtype=float), bins=n_bins)
    return counts, edges


def plot_influence_hist(scores, threshold, csv_path, svg_path) -> None:
    counts, edges = influence_histogram(scores, threshold)
    rows = [
        [float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(len(counts))
    ]
    write_csv(csv_path, ["bin_lo", "bin_hi", "count"], rows)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    centers = 0.5 * (edges[:-1] + edges[1:])
    ax.bar(centers, counts, width=(edges[1] - edges[0]) * 0.9)
    if math.isfinite(threshold):
        ax.axvline(threshold, color="k", linestyle="--", label="removal threshold")
        ax.legend()
    ax.set_xlabel("curation score")
    ax.set_ylabel("samples")
    fig.tight_layout()
    _save_svg(fig, svg_path)
