"""Static figures (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_diagnosis(report, fault_signal, path, title: str = "") -> Path:
    """Fault trace on top, one innovation panel per zone with +-beta lines."""
    k = report.innovations.shape[0]
    t = report.times
    fig, axes = plt.subplots(k + 1, 1, sharex=True, figsize=(7, 1.8 * (k + 1) + 0.6))
    fs = np.atleast_2d(fault_signal)
    for i, row in enumerate(fs):
        axes[0].plot(t, row, label=f"f_{i + 1}")
    axes[0].set_ylabel("fault")
    axes[0].legend(loc="upper left", fontsize="small")
    for i in range(k):
        ax = axes[i + 1]
        ax.plot(t, report.innovations[i], lw=0.7)
        b = report.thresholds[i]
        ax.axhline(b, color="r", ls="--", lw=0.8)
        ax.axhline(-b, color="r", ls="--", lw=0.8)
        ax.set_ylabel(f"I_{i + 1} (K)")
        lim = max(3 * b, float(np.abs(report.innovations[i, t >= min(30.0, t[-1])]).max()) * 1.2)
        ax.set_ylim(-lim, lim)
    axes[-1].set_xlabel("time (s)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_trajectory(traj, path, title: str = "") -> Path:
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 5))
    ax1.plot(traj.times, traj.states.T, lw=0.6)
    ax1.set_ylabel("node T (K)")
    for i, y in enumerate(traj.outputs):
        ax2.plot(traj.times, y, lw=0.6, label=f"y_{i + 1}")
    ax2.set_ylabel("sensor (K)")
    ax2.set_xlabel("time (s)")
    if len(traj.outputs):
        ax2.legend(loc="upper left", fontsize="small")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
