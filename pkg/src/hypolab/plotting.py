"""Figures for experiment reports (Agg backend, no display needed)."""
from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

MAX_PANELS = 12


def render_report(report, path):
    """One panel per quantity: value with CI half-width against t."""
    series = defaultdict(list)
    for r in report.rows:
        series[r.quantity].append(r)
    names = list(series)[:MAX_PANELS]
    cols = min(3, len(names))
    rows = math.ceil(len(names) / cols)
    fig, axes = plt.subplots(rows, cols, figsize=(4 * cols, 3 * rows), squeeze=False)
    for ax, name in zip(axes.flat, names):
        pts = series[name]
        ts = [r.t if r.t is not None else i for i, r in enumerate(pts)]
        ax.errorbar(ts, [r.value for r in pts], yerr=[r.ci_half for r in pts], fmt="o-", capsize=3)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("t" if pts[0].t is not None else "row")
    for ax in axes.flat[len(names):]:
        ax.axis("off")
    fig.suptitle(f"{report.config['experiment']} on {report.config['group']}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
