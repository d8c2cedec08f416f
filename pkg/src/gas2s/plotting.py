"""Report figures written to files (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def degree_histogram(degrees: np.ndarray, path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    d = np.asarray(degrees)
    bins = np.unique(np.geomspace(1, max(int(d.max(initial=1)), 1) + 1, 40).astype(int))
    ax.hist(np.maximum(d, 1), bins=bins, color="#4c72b0")
    ax.set_xscale("log")
    ax.set_xlabel("degree (train triples)")
    ax.set_ylabel("entities")
    ax.axvline(np.median(d) if len(d) else 0, color="k", ls="--", lw=1, label="median")
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def loss_curve(losses: Sequence[tuple[int, float]], path: str | Path, smooth: int = 25) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if losses:
        steps, vals = map(np.asarray, zip(*losses))
        ax.plot(steps, vals, color="#c0c0c0", lw=0.8, label="loss")
        if len(vals) >= smooth > 1:
            kern = np.ones(smooth) / smooth
            ax.plot(steps[smooth - 1:], np.convolve(vals, kern, "valid"), color="#dd8452", lw=1.5,
                    label=f"mean of {smooth}")
        ax.set_yscale("log")
        ax.legend(frameon=False)
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    return _save(fig, path)


def metrics_bars(report: dict, path: str | Path, title: str = "") -> Path:
    """Bars of MRR and Hits@k, one group per direction plus the overall average."""
    groups = {"all": report}
    groups.update(report.get("per_direction", {}))
    names = ["mrr"] + [f"hits@{k}" for k in report["hits"]]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / len(groups)
    x = np.arange(len(names))
    for i, (label, rep) in enumerate(groups.items()):
        vals = [rep["mrr"]] + [rep["hits"][k] for k in report["hits"]]
        ax.bar(x + i * width, vals, width, label=label)
    ax.set_xticks(x + width * (len(groups) - 1) / 2, names)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def grid_heatmap(rows: Sequence[dict], path: str | Path) -> Path:
    drops = sorted({r["rgat_dropout"] for r in rows})
    heads = sorted({r["rgat_heads"] for r in rows})
    grid = np.full((len(drops), len(heads)), np.nan)
    for r in rows:
        grid[drops.index(r["rgat_dropout"]), heads.index(r["rgat_heads"])] = r["dev_mrr"]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    im = ax.imshow(grid, cmap="viridis", aspect="auto")
    for i in range(len(drops)):
        for j in range(len(heads)):
            ax.text(j, i, f"{grid[i, j]:.3f}", ha="center", va="center", color="w", fontsize=8)
    ax.set_xticks(range(len(heads)), heads)
    ax.set_yticks(range(len(drops)), drops)
    ax.set_xlabel("RGAT heads")
    ax.set_ylabel("RGAT dropout")
    fig.colorbar(im, ax=ax, label="dev MRR")
    return _save(fig, path)
