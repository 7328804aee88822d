"""Matplotlib figures written next to the CSV output."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({
    "svg.hashsalt": "sleflow",
    "figure.figsize": (5.0, 3.6),
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
})


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None} if str(path).endswith(".svg") else None)
    plt.close(fig)


def plot_trace(times, trace, path, title=None):
    fig, ax = plt.subplots()
    pts = np.concatenate([[0.0], np.asarray(trace)])
    ax.plot(pts.real, pts.imag, lw=0.8, color="C0")
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    if title:
        ax.set_title(title)
    _save(fig, path)


def plot_tail(est, path):
    """``log p_hat`` against ``log y`` with the fitted line and the theoretical slope."""
    fig, ax = plt.subplots()
    y = est.y_grid
    p = est.p_hat
    nz = p > 0
    if nz.any():
        ax.errorbar(np.log(y[nz]), np.log(p[nz]), yerr=est.se[nz] / p[nz], fmt="o", ms=4, label="estimate")
    if np.isfinite(est.fitted_slope):
        xx = np.log(y[nz])
        ax.plot(xx, est.intercept + est.fitted_slope * xx, "-", label=f"fit, slope {est.fitted_slope:.3f}")
        ax.plot(xx, est.intercept + est.fitted_slope * xx.mean() + est.q_theory * (xx - xx.mean()), "--",
                label=f"slope q = {est.q_theory:.3f}")
    else:
        ax.text(0.5, 0.5, "no exceedances: inconclusive", transform=ax.transAxes, ha="center")
    ax.set_xlabel("log y")
    ax.set_ylabel("log P(exceed)")
    ax.set_title(f"kappa = {est.kappa:g}, eps = {est.epsilon:g}")
    if nz.any():
        ax.legend(fontsize=8)
    _save(fig, path)


def plot_coupling(run, targets, path):
    """Histograms of ``G`` at each probe against the target normal densities."""
    probes = run.probes[:-1]
    k = len(probes)
    fig, axes = plt.subplots(1, max(k, 1), figsize=(3.0 * max(k, 1), 2.8), squeeze=False)
    G = run.accepted_G()
    for c, ax in enumerate(axes[0][:k]):
        g = G[:, c]
        ax.hist(g, bins=60, density=True, alpha=0.6)
        s = np.sqrt(targets[c])
        xx = np.linspace(g.min(), g.max(), 200)
        ax.plot(xx, np.exp(-0.5 * (xx / s) ** 2) / (s * np.sqrt(2 * np.pi)), "k-", lw=1)
        ax.set_title(f"z = {probes[c]:g}", fontsize=8)
    _save(fig, path)


def plot_exceedance(curve, path, envelope=None):
    fig, ax = plt.subplots()
    ax.step(curve.x, curve.p_hat, where="post", label="P[b > x]")
    ax.fill_between(curve.x, curve.ci_lo, curve.ci_hi, step="post", alpha=0.3)
    if envelope is not None:
        ax.plot(curve.x, envelope * np.exp(-curve.x), "--", label="C exp(-x)")
    ax.set_yscale("symlog", linthresh=1e-4)
    ax.set_xlabel("x")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_matrix(M, labels, path, title=None):
    fig, ax = plt.subplots()
    im = ax.imshow(M, cmap="viridis")
    ax.set_xticks(range(len(labels)), labels, rotation=45, fontsize=7)
    ax.set_yticks(range(len(labels)), labels, fontsize=7)
    fig.colorbar(im, ax=ax)
    if title:
        ax.set_title(title)
    _save(fig, path)
