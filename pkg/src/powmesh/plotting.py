"""Optional static plots of result CSVs (needs matplotlib)."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PANELS = ("StaleRate", "PropDelay90s", "AvgTrafficKbps", "ThroughputTxs")


def plot_csv(csv_path, png_path) -> None:
    """One panel per headline metric, one line per (setup, block size) series."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    series: dict[str, list[dict]] = {}
    for r in rows:
        series.setdefault(f"{r['Setup']} {r['BlockSize']}", []).append(r)
    fig, axes = plt.subplots(1, len(PANELS), figsize=(4 * len(PANELS), 3.2))
    for ax, col in zip(axes, PANELS):
        for label, rs in series.items():
            ax.plot([r["Interval"] + "/" + r["Devices"] for r in rs], [float(r[col]) for r in rs], marker="o", label=label)
        ax.set_title(col)
        ax.tick_params(axis="x", labelrotation=60, labelsize=7)
    axes[0].legend(fontsize=6)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
