"""Training-curve figures rendered next to the summary tables."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

METRIC_LABELS = {
    "C": "collective reward",
    "FC": "mutual cooperation (steps)",
    "I": "inequality",
    "FG": "gifting frequency",
    "token_mean": "token value",
}


def smooth(values: np.ndarray, window: int) -> np.ndarray:
    """Trailing moving average; NaNs propagate so sparse columns stay sparse."""
    if window <= 1 or values.size < 2:
        return values
    kernel = np.ones(min(window, values.size)) / min(window, values.size)
    return np.convolve(values, kernel, mode="valid")


def render_curves(
    per_run_series: dict[str, dict[str, np.ndarray]],
    out_dir,
    window: int = 25,
) -> list[Path]:
    """One PNG per metric: across-seed mean curves, one line per run.

    ``per_run_series[label][metric]`` holds the across-seed per-episode mean
    for one run directory.  Metrics that are entirely NaN for a run (for
    example gifting frequency without a gifting head) are skipped for that
    run; metrics with no data anywhere produce no figure.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for metric, ylabel in METRIC_LABELS.items():
        fig, ax = plt.subplots(figsize=(7, 4.2))
        plotted = False
        for label, series in sorted(per_run_series.items()):
            values = series.get(metric)
            if values is None or np.all(np.isnan(values)):
                continue
            curve = smooth(values, window)
            offset = len(values) - len(curve)
            ax.plot(np.arange(offset, len(values)), curve, label=label, linewidth=1.2)
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_xlabel("episode")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"fig_{metric}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written
