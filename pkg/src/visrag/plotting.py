"""Figure output for benchmark reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

PANELS = (
    ("pass_at_1", "pass@1 (%)", (0, 100)),
    ("mean_ssim", "SSIM", (0, 1)),
    ("mean_psnr", "PSNR (dB)", None),
    ("mean_lpips", "LPIPS", (0, 1)),
)

plt.rcParams.update({
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
})


def plot_report(report, path: str | Path) -> Path:
    """One bar panel per metric, one bar per (mode, prompt) cell."""
    cells = [c for c in report.cells if c.aggregate is not None]
    labels = [f"{c.mode}\n{c.variant}" for c in cells]
    colors = plt.cm.tab10.colors
    fig, axes = plt.subplots(1, len(PANELS), figsize=(2.4 * len(PANELS), 2.8))
    for ax, (attr, title, ylim) in zip(axes, PANELS):
        values = [getattr(c.aggregate, attr) for c in cells]
        heights = [v if v is not None else 0.0 for v in values]
        bars = ax.bar(range(len(cells)), heights, color=[colors[i % len(colors)] for i in range(len(cells))])
        for bar, v in zip(bars, values):
            text = "n/a" if v is None else (f"{v:.1f}" if attr in ("pass_at_1", "mean_psnr") else f"{v:.2f}")
            ax.annotate(text, (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=7)
        ax.set_xticks(range(len(cells)))
        ax.set_xticklabels(labels, fontsize=7)
        ax.set_title(title)
        if ylim:
            ax.set_ylim(*ylim)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
