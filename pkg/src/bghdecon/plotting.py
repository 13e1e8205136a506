"""Figures for the comparison report, rendered straight to files.

Uses the non-interactive Agg backend so nothing needs a display.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"bgh": "tab:blue", "btg": "tab:red"}


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_mpsrf_traces(traces: dict, path, threshold: float = 1.2, converged: dict | None = None) -> Path:
    """R against the number of samples used, log scale, one line per sampler.

    ``traces`` maps a sampler name to its (samples_used, R) list; infinite
    values are clipped to the top of the axis.
    """
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    top = 1.0
    for name, tr in traces.items():
        if not tr:
            continue
        n = np.array([t[0] for t in tr], dtype=float)
        r = np.array([t[1] for t in tr], dtype=float)
        top = max(top, np.nanmax(np.where(np.isfinite(r), r, np.nan), initial=1.0))
        ax.plot(n, r, marker=".", color=COLORS.get(name), label=name.upper())
        it = (converged or {}).get(name)
        if it is not None:
            ax.axvline(it, color=COLORS.get(name), ls=":", lw=1)
    ax.axhline(threshold, color="k", ls="--", lw=1, label=f"R = {threshold:g}")
    ax.set_yscale("log")
    ax.set_ylim(0.9, max(2.0 * top, 1.5 * threshold) if math.isfinite(top) else None)
    ax.set_xlabel("samples per chain")
    ax.set_ylabel("MPSRF")
    ax.legend(frameon=False)
    return _finish(fig, path)


def plot_estimates(estimates: dict, path, true_x=None) -> Path:
    """Posterior-mean amplitude per site for each sampler, with the truth as stems."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    m = len(next(iter(estimates.values())))
    sites = np.arange(m)
    if true_x is not None:
        t = np.asarray(true_x)
        nz = t != 0
        ax.vlines(sites[nz], 0, t[nz], color="0.4", lw=2.5, label="truth")
    width = 0.8 / max(len(estimates), 1)
    for i, (name, pm) in enumerate(estimates.items()):
        off = (i - (len(estimates) - 1) / 2) * width
        ax.vlines(sites + off, 0, np.asarray(pm), color=COLORS.get(name), lw=1.2, label=f"{name.upper()} PM")
    ax.axhline(0, color="k", lw=0.5)
    ax.set_xlim(-1, m)
    ax.set_xlabel("site")
    ax.set_ylabel("amplitude")
    ax.legend(frameon=False)
    return _finish(fig, path)
