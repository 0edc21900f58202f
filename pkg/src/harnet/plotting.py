"""Report figures written to PNG files (non-interactive Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {"figure.dpi": 120, "font.size": 10, "axes.grid": True, "grid.linestyle": ":", "axes.axisbelow": True,
      "legend.framealpha": 0.8}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def _smooth(y, window):
    if len(y) < window:
        return y
    k = np.ones(window) / window
    return np.convolve(y, k, mode="valid")


def plot_loss_curve(trace, path, window: int = 25):
    """Focal, regression and total loss per iteration (moving average) with the lr on a twin axis."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        it = trace.column("iter")
        for name, colour in (("focal", "tab:blue"), ("regression", "tab:orange"), ("total", "k")):
            y = _smooth(trace.column(name), window)
            ax.plot(it[len(it) - len(y):], y, color=colour, lw=1.2, label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel(f"loss ({window}-iter mean)")
        ax.set_yscale("log")
        ax.legend(loc="upper right")
        lr_ax = ax.twinx()
        lr_ax.plot(it, trace.column("lr"), color="tab:gray", ls="--", lw=0.8)
        lr_ax.set_ylabel("learning rate", color="tab:gray")
        lr_ax.grid(False)
        return _save(fig, path)


def plot_pr_curves(curves: dict, path, title: str = "IoU 0.5"):
    """``curves``: {label: (recall, precision)}."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        for label, (recall, precision) in curves.items():
            ax.step(recall, precision, where="post", label=label)
        ax.set_xlim(0, 1.02)
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(title)
        ax.legend(loc="lower left")
        return _save(fig, path)


def plot_ablation(rows, path, metrics=("ap", "ap50", "ap75")):
    """Grouped bars, one group per configuration row (dicts with "name" and metric keys)."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.5, 3.6))
        x = np.arange(len(rows))
        width = 0.8 / len(metrics)
        for j, m in enumerate(metrics):
            ax.bar(x + (j - (len(metrics) - 1) / 2) * width, [r[m] for r in rows], width, label=m)
        ax.set_xticks(x, [r["name"] for r in rows])
        ax.set_ylabel("AP")
        ax.set_ylim(0, 1)
        ax.legend(ncol=len(metrics), loc="upper left")
        return _save(fig, path)
