"""Trace and histogram figures for a finished run (written as PNG files)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

TRACES = (("alpha", r"$\alpha$"), ("gamma", r"$\gamma$"), ("rho_sum", r"$\rho_1+\rho_2$"),
          ("K", "states"))


def _series(recs, key):
    if key == "rho_sum":
        return np.array([r["rho1"] + r["rho2"] for r in recs])
    return np.array([r[key] for r in recs], dtype=float)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def trace_figure(records, chains, burn_in, path):
    fig, axes = plt.subplots(len(TRACES), 1, figsize=(7, 8), sharex=True)
    for c in range(chains):
        recs = [r for r in records if r["chain"] == c and "status" not in r]
        if not recs:
            continue
        it = np.array([r["iteration"] for r in recs])
        for ax, (key, label) in zip(axes, TRACES):
            ax.plot(it, _series(recs, key), lw=0.8, label=f"chain {c}")
            ax.set_ylabel(label)
    for ax in axes:
        ax.axvline(burn_in, color="0.5", ls=":", lw=0.8)
    axes[-1].set_xlabel("iteration")
    axes[0].legend(fontsize=7, loc="upper right")
    _save(fig, path)


def posterior_figure(records, burn_in, path):
    post = [r for r in records if "status" not in r and r["iteration"] > burn_in]
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    if post:
        for ax, (key, label) in zip(axes, (("alpha", r"$\alpha$"), ("rho_sum", r"$\rho_1+\rho_2$"))):
            ax.hist(_series(post, key), bins=30, color="0.4")
            ax.set_xlabel(label)
        k = _series(post, "K").astype(int)
        vals, counts = np.unique(k, return_counts=True)
        axes[2].bar(vals, counts / counts.sum(), color="0.4")
        axes[2].set_xlabel("number of states")
    axes[0].set_ylabel("count")
    _save(fig, path)


def metric_figure(values_by_label, xlabel, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, vals in values_by_label.items():
        vals = np.asarray(vals, dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            ax.hist(vals, bins=20, alpha=0.6, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("snapshots")
    if values_by_label:
        ax.legend(fontsize=7)
    _save(fig, path)


def render_run(out, config):
    from .runner import read_metrics, read_records
    out = Path(out)
    figdir = out / "figures"
    figdir.mkdir(exist_ok=True)
    records = read_records(out, config.chains)
    trace_figure(records, config.chains, config.burn_in, figdir / "trace.png")
    posterior_figure(records, config.burn_in, figdir / "posterior.png")
    metrics = read_metrics(out, config.chains)
    for name, col in (("nll", 1), ("hamming", 2)):
        vals = {f"chain {c}": m[col] for c, m in metrics.items() if np.isfinite(m[col]).any()}
        if vals:
            xlabel = "held-out negative log-likelihood" if name == "nll" else "normalized Hamming distance"
            metric_figure(vals, xlabel, figdir / f"{name}.png")
