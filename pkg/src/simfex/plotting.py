"""Figures written next to the CLI's tabular output (Agg backend, PNG)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_misclassification", "plot_extrapolation", "plot_study_bias"]


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_misclassification(pi, path, title: str = "Estimated misclassification matrix"):
    """Heatmap of ``pi`` (rows: true category, columns: observed category)."""
    pi = np.asarray(pi, dtype=float)
    J = pi.shape[0]
    fig, ax = plt.subplots(figsize=(1.1 * J + 2.5, 1.0 * J + 1.5))
    im = ax.imshow(pi, vmin=0.0, vmax=1.0, cmap="viridis")
    for i in range(J):
        for j in range(J):
            ax.text(j, i, f"{pi[i, j]:.2f}", ha="center", va="center",
                    color="white" if pi[i, j] < 0.6 else "black", fontsize=9)
    ticks = np.arange(J)
    labels = [str(j + 1) for j in ticks]
    ax.set_xticks(ticks, labels)
    ax.set_yticks(ticks, labels)
    ax.set_xlabel("observed category")
    ax.set_ylabel("true category")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return _save(fig, path)


def plot_extrapolation(grid, sequence, extrapolant, path, naive=None, corrected=None,
                       title: str = "Extrapolation of theta_J - theta_1"):
    """Pseudo-estimates of ``theta_J - theta_1`` against ``eta`` with the fitted curve."""
    grid = np.asarray(grid, dtype=float)
    seq = np.asarray(sequence, dtype=float)
    rd = seq[:, -1] - seq[:, 0]
    etas = np.linspace(-1.0, float(grid.max()), 200)
    curve = np.asarray([extrapolant(e) for e in etas])
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    ax.plot(etas, curve[:, -1] - curve[:, 0], color="C0", label=f"{extrapolant.kind} fit")
    ax.plot(grid, rd, "o", color="C0", label="pseudo-estimates")
    if naive is not None:
        ax.plot([0.0], [naive], "s", color="C1", label="naive")
    if corrected is not None:
        ax.plot([-1.0], [corrected], "*", color="C3", markersize=12, label="extrapolated")
    ax.axvline(-1.0, color="grey", lw=0.8, ls="--")
    ax.set_xlabel("eta")
    ax.set_ylabel("theta_J - theta_1")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_study_bias(reports, path, target: str | None = None, title: str = "Bias of theta_J - theta_1"):
    """Grouped bars of bias (with +-2 Monte Carlo SE) per method, one group per report."""
    reports = list(reports)
    methods = []
    for rep in reports:
        for r in rep.rows:
            if r.method not in methods:
                methods.append(r.method)
    x = np.arange(len(reports))
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(5.0, 1.3 * len(reports) + 2), 4.0))
    for k, m in enumerate(methods):
        bias, err = [], []
        for rep in reports:
            row = rep.row(m, target or rep.primary_target)
            bias.append(row.bias)
            err.append(2.0 * row.mcse)
        ax.bar(x + (k - (len(methods) - 1) / 2) * width, bias, width, yerr=err, capsize=3, label=m)
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xticks(x, [f"{r.config['model']} {r.config['setting']}\nNSR={r.config['nsr']:g} J={r.config['J']}"
                      for r in reports], fontsize=8)
    ax.set_ylabel("bias")
    ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, path)
