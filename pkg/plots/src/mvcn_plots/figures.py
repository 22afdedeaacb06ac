"""The five figure kinds.

paths          : sample paths across snapshot times + running mean of cos(X_t)
density_series : overlaid empirical densities at selected snapshot times
density_2d     : 2D empirical density at one snapshot time
rate_fit       : contraction gap decay with the report's fitted and
                 theoretical slope lines
poc_loglog     : particle-count sweep errors against the theoretical N-rate
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import (  # noqa: E402
    SchemaError,
    available_snapshot_times,
    load_gap,
    load_report,
    load_series,
    load_snapshot,
)


def fd_bins(x: np.ndarray) -> int:
    """Freedman-Diaconis bin count (>= 1)."""
    x = np.asarray(x, dtype=float).ravel()
    q75, q25 = np.percentile(x, [75, 25])
    h = 2.0 * (q75 - q25) / len(x) ** (1.0 / 3.0)
    if h <= 0:
        return 1
    return max(1, int(np.ceil((x.max() - x.min()) / h)))


def _select_times(indir, times):
    avail = available_snapshot_times(indir)
    if not avail:
        raise SchemaError(f"no snapshot files under {indir}")
    if times is None:
        return avail
    sel = [t for t in times if any(np.isclose(t, a) for a in avail)]
    if not sel:
        raise SchemaError(
            "no snapshots match the requested times; available times: "
            + ", ".join(f"{a:g}" for a in avail)
        )
    return sel


def paths(indir, outfile, times=None, n_paths=3):
    """Figure-1 style: a few particle paths plus the pooled mean of cos."""
    ts = _select_times(indir, times)
    if len(ts) < 2:
        raise SchemaError("paths figure needs at least two snapshot times")
    series = []
    mean_cos = []
    for t in ts:
        _, pts = load_snapshot(indir, t)
        if pts.shape[1] != 1:
            raise SchemaError("paths figure requires 1D snapshots")
        series.append(pts[:, 0])
        mean_cos.append(np.cos(pts[:, 0]).mean())
    states = np.array(series)  # (T, n); row i over time is one particle path
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(min(n_paths, states.shape[1])):
        ax.plot(ts, states[:, i], lw=1.0, label=f"$X_t$ path {i + 1}")
    ax.plot(ts, mean_cos, "k--", lw=1.5, label=r"mean $\cos(X_t)$")
    ax.set_xlabel("t")
    ax.legend(loc="best", fontsize=8)
    fig.savefig(outfile, dpi=150)
    plt.close(fig)
    return outfile


def density_series(indir, outfile, times=None):
    """Figure-2 style: overlaid 1D histograms at the selected times."""
    ts = _select_times(indir, times)
    fig, ax = plt.subplots(figsize=(7, 4))
    for t in ts:
        _, pts = load_snapshot(indir, t)
        if pts.shape[1] != 1:
            raise SchemaError("density_series requires 1D snapshots")
        x = pts[:, 0]
        ax.hist(x, bins=fd_bins(x), density=True, histtype="step",
                label=f"t={t:g}")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend(loc="best", fontsize=8)
    fig.savefig(outfile, dpi=150)
    plt.close(fig)
    return outfile


def density_2d(indir, outfile, times=None):
    """Figure-3 style: 2D empirical density at one time (latest by default)."""
    ts = _select_times(indir, times)
    t = ts[-1]
    _, pts = load_snapshot(indir, t)
    if pts.shape[1] < 2:
        raise SchemaError("density_2d requires at least 2D snapshots")
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    h = ax.hist2d(pts[:, 0], pts[:, 1],
                  bins=[fd_bins(pts[:, 0]), fd_bins(pts[:, 1])], density=True)
    fig.colorbar(h[3], ax=ax, label="density")
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    ax.set_title(f"t = {t:g}")
    fig.savefig(outfile, dpi=150)
    plt.close(fig)
    return outfile


def rate_fit(indir, outfile, times=None):
    """Contraction diagnostics: the recorded gap series on a log scale with
    the report's fitted slope and the theoretical law rate -(c3-c4)/2, both
    read from report.json (never re-fitted here)."""
    doc = load_report(indir)
    data = load_gap(indir) if "gap" in doc.get("series_files", {}) else None
    if data is None:
        raise SchemaError("rate_fit needs a contraction report with a gap series")
    t, gap = data[:, 0], data[:, 1]
    pos = gap > 0
    fitted = doc["fitted"]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.semilogy(t[pos], gap[pos], "o", ms=3, label="mean p-th power gap")
    slope = fitted.get("gap_slope")
    if slope is not None and np.isfinite(slope) and pos.any():
        t0, g0 = t[pos][0], gap[pos][0]
        end = fitted.get("fit_window_end", t[-1])
        tt = np.linspace(t0, end, 50)
        ax.semilogy(tt, g0 * np.exp(slope * (tt - t0)), "r-",
                    label=f"fitted slope {slope:.3g}")
    theo = fitted.get("theoretical_law_slope")
    if theo is not None and pos.any():
        t0 = t[pos][0]
        w0 = data[:, 2][pos][0] if data.shape[1] > 2 else gap[pos][0]
        tt = np.linspace(t0, t[-1], 50)
        ax.semilogy(tt, max(w0, 1e-300) * np.exp(theo * (tt - t0)), "g--",
                    label=f"theoretical law rate {theo:.3g}")
    ax.set_xlabel("t")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"{doc['name']}: {doc['verdict']}")
    fig.savefig(outfile, dpi=150)
    plt.close(fig)
    return outfile


def poc_loglog(indir, outfile, times=None):
    """Particle-sweep errors vs N on log-log axes with the theoretical rate."""
    doc = load_report(indir)
    data = load_series(indir, doc, "poc")
    N, es, em, eps = data.T
    fig, ax = plt.subplots(figsize=(6, 4.5))
    ax.loglog(N, es, "o-", label="strong error")
    ax.loglog(N, em, "s-", label="measure error")
    scale = es[0] / eps[0] if eps[0] > 0 else 1.0
    ax.loglog(N, scale * eps, "k--",
              label=f"eps_N (slope {doc['fitted'].get('theoretical_slope', 0):.3g})")
    ax.set_xlabel("N")
    ax.set_ylabel("error")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"{doc['name']}: {doc['verdict']} "
                 f"(fitted slope {doc['fitted'].get('strong_slope', float('nan')):.3g})")
    fig.savefig(outfile, dpi=150)
    plt.close(fig)
    return outfile


FIGURE_KINDS = {
    "paths": paths,
    "density_series": density_series,
    "density_2d": density_2d,
    "rate_fit": rate_fit,
    "poc_loglog": poc_loglog,
}


def render(kind, indir, outfile, times=None):
    if kind not in FIGURE_KINDS:
        raise SchemaError(f"unknown figure kind '{kind}'; "
                          f"choose from {', '.join(sorted(FIGURE_KINDS))}")
    return FIGURE_KINDS[kind](indir, outfile, times=times)
