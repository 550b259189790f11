"""Figures for the analysis reports, written as deterministic SVG."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "hideseek",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def export_chart(data, kind: str, path, title: str = "", xlabel: str = "", ylabel: str = "") -> Path:
    """Bar chart of {label: value}, or line chart of {series: (x, y)}.

    Insertion order of ``data`` fixes the drawing order, so equal inputs give
    byte-identical files.
    """
    if not data:
        raise ValueError("nothing to plot")
    with plt.rc_context(STYLE):
        if kind == "bar":
            labels = list(data)
            values = [float(data[k]) for k in labels]
            fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(labels) + 1.5), 3.2))
            ax.bar(np.arange(len(labels)), values, color="#3b6ea5")
            ax.set_xticks(np.arange(len(labels)))
            ax.set_xticklabels(labels, rotation=45 if len(labels) > 8 else 0,
                               ha="right" if len(labels) > 8 else "center")
            ax.axhline(0.0, color="black", linewidth=0.6)
        elif kind == "line":
            fig, ax = plt.subplots(figsize=(5.0, 3.2))
            for name, (x, y) in data.items():
                if len(x) == 0:
                    raise ValueError(f"series {name!r} is empty")
                ax.plot(np.asarray(x), np.asarray(y), label=str(name), linewidth=1.2)
            if len(data) > 1:
                ax.legend(frameon=False)
        else:
            raise ValueError(f"unknown chart kind {kind!r}")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        return _save(fig, path)


def grouped_bars(groups: dict, labels, path, title: str = "", ylabel: str = "") -> Path:
    """One bar per (label, group); ``groups`` maps a legend name to per-label values."""
    if not groups:
        raise ValueError("nothing to plot")
    labels = list(labels)
    n = len(groups)
    width = 0.8 / n
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(5.0, 0.6 * len(labels) * max(1, n / 2) + 1.5), 3.4))
        for k, (name, values) in enumerate(groups.items()):
            ax.bar(np.arange(len(labels)) + (k - (n - 1) / 2) * width, values, width, label=name)
        ax.set_xticks(np.arange(len(labels)))
        ax.set_xticklabels(labels)
        ax.axhline(0.0, color="black", linewidth=0.6)
        ax.set_title(title)
        ax.set_ylabel(ylabel)
        if n > 1:
            ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def quadfit_plot(x, y, fit, path, labels=None, xlabel="living steps", ylabel="probe accuracy") -> Path:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        ax.scatter(x, y, color="#3b6ea5", zorder=3)
        for i, lab in enumerate(labels or []):
            ax.annotate(str(lab), (x[i], y[i]), fontsize=7, xytext=(3, 3), textcoords="offset points")
        xs = np.linspace(x.min(), x.max(), 100)
        ax.plot(xs, fit(xs), color="#c44e52", linewidth=1.2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        fig.tight_layout()
        return _save(fig, path)
