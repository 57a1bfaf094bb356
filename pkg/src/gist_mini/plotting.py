"""Static figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def sweep_figure(rows, path, training_range=None):
    """Drag, downforce and efficiency against flap angle.

    ``rows`` are dicts with ``alpha_deg, cxs, czs, efficiency`` and optionally
    the ``*_true`` columns.
    """
    a = np.array([r["alpha_deg"] for r in rows])
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    for ax, key, label in zip(axes, ("cxs", "czs", "efficiency"), ("$C_xS$", "$C_zS$", "$|C_zS|/C_xS$")):
        ax.plot(a, [r[key] for r in rows], "o-", color="tab:orange", label="surrogate")
        if f"{key}_true" in rows[0]:
            ax.plot(a, [r[f"{key}_true"] for r in rows], "s--", color="tab:blue", label="ground truth")
        if training_range is not None:
            lo, hi = training_range
            for x0, x1 in ((a.min(), lo), (hi, a.max())):
                if x1 > x0:
                    ax.axvspan(x0, x1, color="0.9", zorder=0)
        ax.set_xlabel("flap angle (deg)")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    return _save(fig, path)


def pid_figure(report, path):
    """Per-part absolute drag-coefficient error with both thresholds."""
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(report.rows) + 2), 3.6))
    names = [r.pid for r in report.rows]
    errs = [r.abs_err for r in report.rows]
    colors = ["tab:green" if r.replace else "tab:orange" if r.usable else "tab:red" for r in report.rows]
    ax.bar(names, errs, color=colors)
    ax.axhline(report.usability, color="tab:orange", ls="--", label="usability")
    ax.axhline(report.cfd_replacement, color="tab:green", ls="--", label="CFD replacement")
    ax.set_ylabel(r"$|\Delta C_xS|$")
    ax.legend(fontsize=8)
    return _save(fig, path)


def bench_figure(rows, slope, path):
    n = np.array([r[0] for r in rows], dtype=float)
    t = np.array([r[1] for r in rows])
    fig, ax = plt.subplots(figsize=(4.5, 3.6))
    ax.loglog(n, t, "o-", label=f"slope {slope:.2f}")
    ax.loglog(n, t[0] * n / n[0], ":", color="0.5", label="linear")
    ax.set_xlabel("N")
    ax.set_ylabel("seconds")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def training_figure(history, path):
    fig, ax = plt.subplots(figsize=(4.5, 3.6))
    ax.semilogy(np.arange(len(history)), history)
    ax.set_xlabel("epoch")
    ax.set_ylabel("normalized MSE")
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)
