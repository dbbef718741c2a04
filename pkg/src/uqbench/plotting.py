"""Report figures rendered with the non-interactive Agg backend."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import standard_normal_pdf  # noqa: E402

# drop the version stamp so identical data gives identical bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)


def _steps(ax, hist, label):
    dens = hist.density
    ax.stairs(dens, hist.edges, label=label)


def nr_figure(entries, path):
    """Normalized-residual densities of every scored model over the standard normal."""
    fig, ax = plt.subplots(figsize=(6, 4))
    lo, hi = -4.0, 4.0
    for e in entries:
        if e.nr is None:
            continue
        _steps(ax, e.nr.histogram, e.name)
        lo = min(lo, e.nr.histogram.edges[0])
        hi = max(hi, e.nr.histogram.edges[-1])
    grid = np.linspace(lo, hi, 400)
    ax.plot(grid, standard_normal_pdf(grid), "k--", lw=1, label="N(0, 1)")
    ax.set_xlabel("normalized residual z")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    _save(fig, path)


def sigma_eps_figure(entries, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for e in entries:
        if e.uncertainty is not None:
            _steps(ax, e.uncertainty.histogram, e.name)
    ax.set_xlabel("epistemic std")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    _save(fig, path)


def convergence_figure(curves, path, reference):
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    n_e = curves["n_e"]
    axes[0].plot(n_e, curves["log_pdf_difference"], "o-")
    axes[0].set_ylabel("integrated |log p - log p_ref|")
    axes[1].plot(n_e, curves["mean_squared_difference"], "o-")
    axes[1].set_ylabel("mean squared difference")
    for ax in axes:
        ax.set_xscale("log")
        ax.set_xlabel(f"ensemble size (reference {reference})")
    _save(fig, path)


def parity_figure(entries, y, path):
    """Predicted mean against truth with total-uncertainty error bars."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for e in entries:
        post = e.posterior
        ax.errorbar(y, post.mu, yerr=post.total_std, fmt=".", ms=3, alpha=0.5, label=e.name)
    lims = [float(np.min(y)), float(np.max(y))]
    ax.plot(lims, lims, "k-", lw=0.8)
    ax.set_xlabel("true output")
    ax.set_ylabel("predicted mean")
    ax.legend(fontsize=8)
    _save(fig, path)
