"""Report figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns give identical files
_PNG_META = {"Software": None}

STYLE = {
    "figure.figsize": (5.0, 4.0),
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_roc(curves, path, title="ROC on the held-out split"):
    """``curves`` maps a legend label to a :class:`~nireg.metrics.RocCurve`."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, c in curves.items():
            ax.plot(c.fpr, c.tpr, drawstyle="default", label=f"{label} (auc = {c.auc:.3f})")
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def plot_tuning(result, path, name):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        grid = np.asarray(result.grid)
        for f in range(result.scores.shape[1]):
            ax.plot(grid, result.scores[:, f], color="0.75", lw=0.8)
        ax.plot(grid, result.means, "o-", color="C0", label="mean held-out auc")
        ax.axvline(result.best_value, color="C3", lw=0.8, ls=":", label=f"best {name} = {result.best_value:g}")
        ax.set_xscale("log")
        ax.set_xlabel(name)
        ax.set_ylabel("auc")
        ax.set_title(result.protocol.replace("_", " "))
        ax.legend(loc="best", frameon=False)
        _save(fig, path)


def plot_clusters(pcs, labels, partition, path):
    """Two panels (class 0, class 1) on the first two principal components."""
    pcs = np.asarray(pcs)
    y = np.asarray(labels)
    second = pcs[:, 1] if pcs.shape[1] > 1 else np.zeros(len(pcs))
    assign = partition.assignment()
    with plt.rc_context(STYLE | {"figure.figsize": (8.0, 3.6)}):
        fig, axes = plt.subplots(1, 2, sharex=True, sharey=True)
        for cls, ax in zip((0, 1), axes):
            m = y == cls
            ax.scatter(pcs[m, 0], second[m], c=assign[m], cmap="tab10", vmin=0, vmax=9, s=4, lw=0)
            ax.set_title(f"class {cls}")
            ax.set_xlabel("PC1")
        axes[0].set_ylabel("PC2")
        _save(fig, path)
