"""Static figures for the metrics table.

SVGs are written with a fixed hash salt and no date metadata so that equal
inputs give byte-identical files.
"""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger(__name__)

STYLE = {
    "svg.hashsalt": "forkentropy",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 3.5,
}

OUTCOME_LABELS = {
    "external_productivity": "external productivity (commits)",
    "acceptance_rate": "external PR acceptance rate",
    "bug_reports": "bug reports",
}


def _save(fig, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.debug("wrote %s", path)
    return path


def _series(rows, column):
    xs, ys = [], []
    for i, r in enumerate(rows):
        if r[column] is not None:
            xs.append(i)
            ys.append(r[column])
    return xs, ys


def entropy_timeseries(rows, path, title=None):
    """Fork entropy and the three outcomes per month for one project, stacked vertically."""
    rows = sorted(rows, key=lambda r: r["month"])
    months = [r["month"] for r in rows]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(4, 1, figsize=(7, 7.5), sharex=True)
        ax = axes[0]
        for column, label, style in (
            ("fork_entropy", "all commits", "-o"),
            ("fork_entropy_pr_variant", "pull-request changes", "--s"),
        ):
            xs, ys = _series(rows, column)
            ax.plot(xs, ys, style, label=label)
        ax.set_ylabel("fork entropy")
        ax.set_ylim(0, 1)
        ax.legend(loc="upper left", frameon=False)
        for ax, column in zip(axes[1:], OUTCOME_LABELS):
            xs, ys = _series(rows, column)
            ax.plot(xs, ys, "-o", color="0.25")
            ax.set_ylabel(OUTCOME_LABELS[column], fontsize=8)
        axes[-1].set_xticks(range(len(months)))
        step = max(1, len(months) // 12)
        axes[-1].set_xticklabels([m if i % step == 0 else "" for i, m in enumerate(months)], rotation=45, ha="right")
        if title:
            axes[0].set_title(title)
        fig.tight_layout()
        return _save(fig, Path(path))


def entropy_vs_outcomes(rows, path, title=None):
    """Scatter of fork entropy against each outcome; the data behind interaction plots."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(9, 3))
        for ax, column in zip(axes, OUTCOME_LABELS):
            pts = [(r["fork_entropy"], r[column]) for r in rows if r["fork_entropy"] is not None and r[column] is not None]
            if pts:
                xs, ys = zip(*pts)
                ax.scatter(xs, ys, s=10, color="0.2", alpha=0.7)
            ax.set_xlabel("fork entropy")
            ax.set_ylabel(OUTCOME_LABELS[column], fontsize=8)
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, Path(path))
