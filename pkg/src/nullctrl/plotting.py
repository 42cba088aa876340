"""Figures written next to the CSV/JSON reports.  Uses the Agg backend only."""
from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

golden = (np.sqrt(5) - 1.0) / 2.0
fig_width = 5.0

PARAMS = {
    "axes.prop_cycle": matplotlib.cycler(color=["#08589e", "#2b8cbe", "#4eb3d3", "#7bccc4", "#a8ddb5", "#d95f0e"]),
    "axes.labelsize": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.family": "serif",
    "font.size": 9,
    "mathtext.fontset": "stix",
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "figure.figsize": [fig_width, fig_width * golden],
    "figure.dpi": 150,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "savefig.bbox": "tight",
    "svg.hashsalt": "nullctrl",
}


@contextmanager
def style():
    with plt.rc_context(PARAMS):
        yield


def _save(fig, path: Path) -> Path:
    # no timestamp in the file so reruns give identical images
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_sweep(eps, norms, weighted, fit_range, slope, path) -> Path:
    with style():
        fig, ax = plt.subplots()
        ax.loglog(eps, norms, "o-", label=r"$\|z^\varepsilon(T)\|$")
        ax.loglog(eps, weighted, "s--", label=r"$\|u^\varepsilon e^{-s\bar\alpha}\|$")
        lo, hi = fit_range
        if hi > lo:
            e = np.asarray(eps[lo : hi + 1])
            ax.loglog(e, norms[lo] * (e / e[0]) ** slope, ":", color="k", label=f"slope {slope:.3f}")
        ax.set_xlabel(r"$\varepsilon$")
        ax.legend()
        return _save(fig, path)


def plot_field(t, x, values, path, title: str = "", label: str = "") -> Path:
    """Space-time heat map of one scalar field of shape (len(t), len(x))."""
    with style():
        fig, ax = plt.subplots()
        mesh = ax.pcolormesh(x, t, values, shading="auto", cmap="RdBu_r")
        fig.colorbar(mesh, ax=ax, label=label)
        ax.set_xlabel("x")
        ax.set_ylabel("t")
        ax.grid(False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_profiles(x, profiles: dict, path, ylabel: str = "") -> Path:
    with style():
        fig, ax = plt.subplots()
        for name, vals in profiles.items():
            ax.plot(x, vals, label=name)
        ax.set_xlabel("x")
        ax.set_ylabel(ylabel)
        ax.legend(ncol=2)
        return _save(fig, path)


def plot_weights(t, log_bar, log_under, path) -> Path:
    with style():
        fig, ax = plt.subplots()
        ax.plot(t, log_bar, label=r"$2s\bar\alpha$")
        ax.plot(t, log_under, "--", label=r"$2s\alpha_{\mathrm{low}}$")
        ax.set_xlabel("t")
        ax.set_ylabel("log weight")
        ax.legend()
        return _save(fig, path)


def plot_ratios(ratios, path, ylabel: str = "ratio") -> Path:
    with style():
        fig, ax = plt.subplots()
        ax.semilogy(np.arange(len(ratios)), ratios, ".")
        ax.set_xlabel("sample")
        ax.set_ylabel(ylabel)
        return _save(fig, path)


def plot_history(values, path, ylabel: str, logy: bool = True) -> Path:
    with style():
        fig, ax = plt.subplots()
        it = np.arange(len(values))
        (ax.semilogy if logy else ax.plot)(it, values, "o-")
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        return _save(fig, path)
