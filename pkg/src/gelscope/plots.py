"""Figures written next to the CSV output (matplotlib, Agg backend)."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}  # keep PNG bytes independent of the matplotlib version string


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_moments(traj, path, title: str = "") -> Path:
    """M0, M1, M2 and lost mass against time."""
    mom = traj.moments
    t = mom[:, 0]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    for col, name in ((1, "M0"), (2, "M1"), (5, "lost mass")):
        ax1.plot(t, mom[:, col], label=name)
    ax1.set_xlabel("t")
    ax1.legend()
    ax1.set_title(title or "moments")
    ax2.semilogy(t, np.maximum(mom[:, 3], 1e-300))
    ax2.set_xlabel("t")
    ax2.set_ylabel("M2")
    return _save(fig, path)


def plot_cascade(run, bn, path) -> Path:
    """Running suprema of ``c_n`` against the level bound, and tracked mass."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    n = np.arange(run.sup_c.size)
    pos = run.sup_c > 0
    ax1.semilogy(n[pos], run.sup_c[pos], "o", ms=3, label="sup_t c_n")
    if bn is not None:
        ax1.semilogy(np.arange(len(bn)), bn, "-", label="b_n")
    ax1.set_xlabel("n")
    ax1.legend()
    ax2.plot(run.times, run.M1, label="tracked M1")
    ax2.plot(run.times, run.overflow, label="overflow")
    ax2.set_xlabel("t")
    ax2.legend()
    ax2.set_title(f"alpha = {run.alpha:g}, n_max = {run.n_max}")
    return _save(fig, path)


def plot_largest(runs, threshold: float, path) -> Path:
    """Largest cluster against time for each particle run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in runs:
        t = np.append(r.largest_t, r.t_final)
        m = np.append(r.largest_m, r.largest_m[-1])
        ax.step(t, m, where="post", lw=0.8)
    ax.axhline(threshold, color="k", ls="--", lw=0.8, label="gel threshold")
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("largest cluster")
    ax.legend()
    return _save(fig, path)


def plot_scan(rows, path) -> Path:
    """Empirical gel time and theoretical bound against α, one panel per family."""
    fams = sorted({r.family for r in rows})
    fig, axes = plt.subplots(1, len(fams), figsize=(5 * len(fams), 4), squeeze=False)
    colors = {"gel": "tab:red", "conserve": "tab:blue", "inconclusive": "tab:gray", "paper-open": "tab:orange"}
    for ax, fam in zip(axes[0], fams):
        sel = [r for r in rows if r.family == fam]
        for r in sel:
            y = r.gel_time_estimate
            finest = r.loss_times[-1]
            shown = y if y is not None else finest
            if shown is None:
                ax.scatter([r.alpha], [1.0], marker="x", color=colors[r.verdict])
                continue
            ax.scatter([r.alpha], [shown], color=colors[r.verdict], label=r.verdict)
            if math.isfinite(r.bound):
                ax.scatter([r.alpha], [r.bound], marker="_", s=200, color="k")
        ax.set_yscale("log")
        ax.set_xlabel("alpha")
        ax.set_ylabel("gel time (estimate or finest loss time)")
        ax.set_title(fam)
        h, lab = ax.get_legend_handles_labels()
        uniq = dict(zip(lab, h))
        if uniq:
            ax.legend(uniq.values(), uniq.keys())
    return _save(fig, path)


def plot_H_profile(profile, path, title: str = "") -> Path:
    """``H(a)`` on a log-log scale."""
    a = np.array([p[0] for p in profile])
    h = np.array([p[1] for p in profile])
    fig, ax = plt.subplots(figsize=(6, 4))
    pos = h > 0
    ax.loglog(a[pos], h[pos], "o-", ms=3)
    ax.set_xlabel("a")
    ax.set_ylabel("H(a)")
    ax.set_title(title)
    return _save(fig, path)
