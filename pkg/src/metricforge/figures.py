"""Matplotlib renderings of the delimited reports, written next to the CSVs.

All figures go through one savefig helper that strips volatile metadata so a
seeded pipeline produces byte-identical PNGs on every run.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import RocCurve
from .projection import Projection2D
from .train import TrainReport
from .util import atomic_write

_RC = {
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.framealpha": 0.9,
}

_CLASS_STYLE = {
    0: {"color": "#2c7fb8", "marker": "o", "label": "real"},
    1: {"color": "#d95f02", "marker": "^", "label": "fake"},
}


def _save(fig, path) -> None:
    with atomic_write(path, binary=True) as fh:
        fig.savefig(fh, format="png", metadata={"Software": None})
    plt.close(fig)


def scatter_png(panels: list[tuple[str, Projection2D]], path) -> None:
    """One panel per 2D projection, colored by class."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 4.0), squeeze=False)
        for ax, (title, proj) in zip(axes[0], panels):
            for cls, style in _CLASS_STYLE.items():
                mask = proj.labels == cls
                ax.scatter(proj.points[mask, 0], proj.points[mask, 1], s=8, alpha=0.6, **style)
            ax.set_title(f"{title} (var {proj.explained_fraction:.0%})")
            ax.set_xlabel("pc1")
            ax.set_ylabel("pc2")
            ax.legend()
        fig.tight_layout()
        _save(fig, path)


def roc_png(curves: list[tuple[str, RocCurve]], path) -> None:
    """ROC overlay with the chance diagonal."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.4, 4.2))
        for name, curve in curves:
            ax.plot(curve.fpr, curve.tpr, label=name, linewidth=1.6)
        ax.plot([0, 1], [0, 1], linestyle="--", color="gray", linewidth=1.0)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(-0.02, 1.02)
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def train_curves_png(report: TrainReport, path) -> None:
    """Loss and triplet-category dynamics per epoch."""
    epochs = list(range(len(report.mean_loss)))
    with plt.rc_context(_RC):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.4, 3.6))
        ax1.plot(epochs, report.mean_loss, color="#d95f02", linewidth=1.6)
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("mean triplet loss")
        totals = [max(s.total, 1) for s in report.mining]
        ax2.plot(epochs, [s.easy_count / t for s, t in zip(report.mining, totals)], label="easy")
        ax2.plot(
            epochs, [s.semihard_count / t for s, t in zip(report.mining, totals)], label="semi-hard"
        )
        ax2.plot(epochs, [s.hard_count / t for s, t in zip(report.mining, totals)], label="hard")
        ax2.plot(epochs, report.active_fraction, label="active", linestyle="--", color="black")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("fraction of mined triplets")
        ax2.set_ylim(-0.02, 1.02)
        ax2.legend()
        fig.tight_layout()
        _save(fig, path)
