"""Figures rendered next to the CSV files written by the command line."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {"font.size": 9, "axes.spines.top": False, "axes.spines.right": False,
      "figure.dpi": 120, "savefig.bbox": "tight", "svg.hashsalt": "map-lab"}


def figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def plot_trace(trace, path, title: str = "") -> Path:
    """Charge and cumulative costs against time."""
    t = [r.t for r in trace]
    with plt.rc_context(RC):
        fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, figsize=(5, 4))
        ax0.plot(t, [r.alpha for r in trace], lw=1)
        ax0.set_ylabel("charge")
        ax1.plot(t, [r.service for r in trace], lw=1, label="service")
        ax1.plot(t, [r.movement for r in trace], lw=1, label="movement")
        ax1.set_xlabel("t")
        ax1.set_ylabel("cumulative cost")
        ax1.legend(frameon=False)
        if title:
            ax0.set_title(title)
        out = figure_path(path)
        fig.savefig(out, metadata={"Software": None})
        plt.close(fig)
    return out


def plot_ratios(rows, path, key: str = "ratio", title: str = "") -> Path:
    """Mean of ``key`` per n with the individual observations behind it."""
    ns = sorted({r["n"] for r in rows})
    means = [sum(r[key] for r in rows if r["n"] == n) / sum(1 for r in rows if r["n"] == n)
             for n in ns]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.scatter([r["n"] for r in rows], [r[key] for r in rows], s=8, alpha=0.4)
        ax.plot(ns, means, marker="o", lw=1)
        ax.set_xlabel("n")
        ax.set_ylabel(key)
        if title:
            ax.set_title(title)
        out = figure_path(path)
        fig.savefig(out, metadata={"Software": None})
        plt.close(fig)
    return out
