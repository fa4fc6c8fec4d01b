"""Rendered reports: static PNG figures written next to the CSV outputs.

Everything here is presentation only; the numeric artifacts are the CSVs.
The Agg backend keeps rendering headless and deterministic.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .estimator import CateCurve

__all__ = ["curve_figure", "simulation_figure", "vd_figure"]

_DPI = 150


def curve_figure(curve: CateCurve, path, *, truth=None) -> None:
    """Effect curve with pointwise 95% band; optional true curve overlay."""
    x = curve.grid[:, 0]
    ok = ~curve.missing
    lo, hi = curve.confidence_bounds()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    has_band = ok & ~np.isnan(lo)
    if has_band.any():
        ax.fill_between(x[has_band], lo[has_band], hi[has_band], alpha=0.25, lw=0, label="95% band")
    ax.plot(x[ok], curve.tau_hat[ok], marker="o", ms=3.5, lw=1.2, label="estimate")
    if truth is not None:
        ax.plot(x, truth, ls="--", lw=1.0, color="black", label="truth")
    if (~ok).any():
        for xv in x[~ok]:
            ax.axvline(xv, color="red", ls=":", lw=0.8)
    ax.set_xlabel("x1")
    ax.set_ylabel("conditional effect")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def simulation_figure(x1_grid, t_stat: np.ndarray, report, path) -> None:
    """Standardized-statistic histograms per grid point plus a metrics panel."""
    grid = np.asarray(x1_grid, dtype=float)
    G = grid.size
    ncols = min(3, G)
    nrows = int(np.ceil(G / ncols)) + 1
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.6 * nrows), squeeze=False)
    z = np.linspace(-4, 4, 201)
    phi = np.exp(-0.5 * z**2) / np.sqrt(2 * np.pi)
    for g in range(G):
        ax = axes[g // ncols][g % ncols]
        col = t_stat[:, g]
        col = col[~np.isnan(col)]
        if col.size >= 2 and col.std(ddof=1) > 0:
            std = (col - col.mean()) / col.std(ddof=1)
            ax.hist(std, bins=30, density=True, alpha=0.6)
            ax.plot(z, phi, lw=1.0, color="black")
        ax.set_title(f"x1 = {grid[g]:g}", fontsize=9)
        ax.tick_params(labelsize=7)
    for g in range(G, (nrows - 1) * ncols):
        axes[g // ncols][g % ncols].axis("off")

    gs = axes[nrows - 1][0].get_gridspec()
    for ax in axes[nrows - 1]:
        ax.remove()
    panel = fig.add_subplot(gs[nrows - 1, :])
    panel.plot(grid, report.bias, marker="o", ms=3.5, label="bias")
    panel.plot(grid, report.sam_sd, marker="s", ms=3.5, label="sample SD of T")
    panel.axhline(0.0, color="gray", lw=0.6)
    panel.set_xlabel("x1")
    panel.legend(frameon=False, fontsize=8)
    panel.tick_params(labelsize=7)
    fig.suptitle(
        f"{report.model} {report.combination} n={report.n} R={report.replications}",
        fontsize=10,
    )
    fig.tight_layout(rect=(0, 0, 1, 0.97))
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def vd_figure(p1_values, p2_grid, vd_matrix: np.ndarray, path) -> None:
    """One variance-factor curve per reference probability p1."""
    p2 = np.asarray(p2_grid, dtype=float)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for i, p1 in enumerate(p1_values):
        ax.plot(p2, vd_matrix[i], lw=1.2, label=f"p1 = {p1:g}")
    ax.axhline(0.0, color="gray", lw=0.6)
    ax.set_xlabel("p2")
    ax.set_ylabel("vd(p1, p2)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
