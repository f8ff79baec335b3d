"""
Optional PNG figures for the CSV artifacts
"""
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from models import ChurnSeries, FingerprintRecord, Flag

logger = logging.getLogger(__name__)

DPI = 150


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    logger.info("wrote %s", path)
    return path


def plot_churn(series_map: Dict[Optional[Flag], ChurnSeries], threshold: float, path: Path) -> Path:
    """Joining and leaving fraction over time, one panel per flag"""
    fig, axes = plt.subplots(len(series_map), 1, figsize=(12, 3 * len(series_map)), squeeze=False)
    for ax, (flag, series) in zip(axes[:, 0], series_map.items()):
        times = [p.timestamp for p in series.points]
        ax.plot(times, [np.nan if p.alpha_new is None else p.alpha_new for p in series.points],
                label="new", linewidth=0.8)
        ax.plot(times, [np.nan if p.alpha_left is None else p.alpha_left for p in series.points],
                label="left", linewidth=0.8)
        ax.axhline(threshold, color='red', linestyle='--', linewidth=0.8, label=f"threshold {threshold}")
        for start, end in series.gaps:
            ax.axvspan(start, end, color='grey', alpha=0.2)
        ax.set_title(flag.value if flag else "all relays")
        ax.set_ylabel("churn")
        ax.legend(loc='upper right')
    return _save(fig, path)


def plot_sweep(sweep: pd.DataFrame, path: Path) -> Path:
    """Alert count against threshold, log scale, one line per window"""
    fig, ax = plt.subplots(figsize=(8, 5))
    for window, rows in sweep.groupby("window"):
        ax.plot(rows["threshold"], rows["count"].clip(lower=0.5), marker='o', label=f"w = {window}")
    ax.set_yscale('log')
    ax.set_xlabel("threshold")
    ax.set_ylabel("alerts")
    ax.legend()
    return _save(fig, path)


def plot_fingerprint_ranks(records: Sequence[FingerprintRecord], path: Path) -> Path:
    """Observed fingerprints per address, addresses in rank order"""
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(range(1, len(records) + 1), [r.count for r in records], drawstyle='steps-post')
    ax.set_xscale('log')
    ax.set_yscale('log')
    ax.set_xlabel("address rank")
    ax.set_ylabel("number of observed fingerprints")
    return _save(fig, path)


def plot_accuracy_ecdf(values: Sequence[float], path: Path) -> Path:
    """Empirical CDF of per-search accuracy"""
    ordered = np.sort(np.asarray(values, dtype=float))
    fig, ax = plt.subplots(figsize=(8, 5))
    if ordered.size:
        ax.step(ordered, np.arange(1, ordered.size + 1) / ordered.size, where='post')
    ax.set_xlim(0, 1.02)
    ax.set_xlabel("accuracy")
    ax.set_ylabel("fraction of searches")
    return _save(fig, path)
