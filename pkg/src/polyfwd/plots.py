"""Optional report figures written next to the CSV outputs.

The CSV files are the result contract; these PNGs are conveniences rendered
with the non-interactive Agg backend.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["curve_figure", "correlation_figure", "exposure_figure", "filter_error_figure",
           "surface_figure"]

_META = {"Software": None}


def _save(fig, path: Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=_META)
    plt.close(fig)
    return str(path)


def curve_figure(path, T1: Sequence[float], forwards_q: Sequence[float],
                 forwards_p: Sequence[float] | None = None) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(T1, forwards_q, "o-", label="pricing measure")
    if forwards_p is not None:
        ax.plot(T1, forwards_p, "s--", label="expected spot (real world)")
    ax.set_xlabel("delivery start (years)")
    ax.set_ylabel("calendar forward")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def correlation_figure(path, corr: np.ndarray, labels: Sequence[str]) -> str:
    fig, ax = plt.subplots(figsize=(5, 4.5))
    im = ax.imshow(corr, vmin=min(0.0, float(corr.min())), vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=90)
    ax.set_yticks(range(len(labels)), labels)
    fig.colorbar(im, ax=ax, label="instantaneous correlation")
    return _save(fig, path)


def exposure_figure(path, stats_list) -> str:
    """Hedged vs unhedged exposure densities, one panel per horizon."""
    n = len(stats_list)
    cols = min(3, n)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3 * rows), squeeze=False)
    for ax, s in zip(axes.flat, stats_list):
        mid = 0.5 * (s.hist_edges[1:] + s.hist_edges[:-1])
        ax.plot(mid, s.unhedged_density, label="unhedged")
        ax.plot(mid, s.hedged_density, label="hedged")
        ax.set_title(f"{s.horizon} years")
        ax.set_xlabel("exposure")
    for ax in list(axes.flat)[n:]:
        ax.set_visible(False)
    axes.flat[0].legend()
    fig.tight_layout()
    return _save(fig, path)


def filter_error_figure(path, per_date: Sequence[float], per_contract: dict) -> str:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(10, 3.5))
    a1.plot(np.arange(1, len(per_date) + 1), 100 * np.asarray(per_date))
    a1.set_xlabel("quote date index")
    a1.set_ylabel("mean relative error (%)")
    js = sorted(per_contract)
    a2.bar([str(j) for j in js], [100 * per_contract[j]["mean"] for j in js],
           yerr=[100 * per_contract[j]["std"] for j in js], capsize=3)
    a2.set_xlabel("nearby contract")
    a2.set_ylabel("relative error (%)")
    fig.tight_layout()
    return _save(fig, path)


def surface_figure(path, times: np.ndarray, mean: np.ndarray, q05: np.ndarray, q95: np.ndarray) -> str:
    """Mean and 5-95% band of each nearby contract over time; ``mean`` is ``(n_t, L)``."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for l in range(mean.shape[1]):
        line, = ax.plot(times, mean[:, l], lw=1, label=f"nearby {l + 1}" if l < 5 else None)
        ax.fill_between(times, q05[:, l], q95[:, l], color=line.get_color(), alpha=0.08)
    ax.set_xlabel("time (years)")
    ax.set_ylabel("forward price")
    ax.legend(fontsize=8)
    return _save(fig, path)
