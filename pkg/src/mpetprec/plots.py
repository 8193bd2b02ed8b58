"""Figure rendering for sweep and spectrum reports.

One PNG per run, written next to the CSV: iteration counts against mesh
resolution, one curve per parameter point (sweeps), plus a kappa panel for
spectrum runs.  Purely a reporting convenience on top of the CSV output.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_sweep_figure", "render_spectrum_figure"]


def _group_curves(rows):
    """Group CSV row dicts into {parameter label: [(N, row), ...]}."""
    curves = {}
    for row in rows:
        label = (
            f"K=[{row['K_list']}] xi=[{row['xi_list']}] "
            f"lam={row['lambda']} s=[{row['s']}]"
        )
        curves.setdefault(label, []).append((int(row["N"]), row))
    for pts in curves.values():
        pts.sort(key=lambda t: t[0])
    return curves


def _plot_metric(ax, curves, key, cast=float):
    for label, pts in curves.items():
        ns = [n for n, _ in pts]
        vals = [cast(r[key]) for _, r in pts if r[key] != ""]
        if len(vals) != len(ns):
            continue
        ax.plot(ns, vals, marker="o", linewidth=1.0, markersize=3, label=label)
    ax.set_xlabel("mesh resolution N")
    ax.set_xscale("log", base=2)
    ax.grid(True, alpha=0.3)
    if len(curves) <= 12:
        ax.legend(fontsize=6)


def render_sweep_figure(rows, path):
    """Iteration counts vs mesh size, one curve per swept parameter point."""
    curves = _group_curves(rows)
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    _plot_metric(ax, curves, "iterations", cast=lambda v: int(v))
    ax.set_ylabel("MinRes iterations")
    ax.set_title(f"{rows[0]['problem']} / {rows[0]['precond']} preconditioner")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_spectrum_figure(rows, path):
    """Iterations and condition numbers vs mesh size, per parameter point."""
    curves = _group_curves(rows)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11.0, 4.5))
    _plot_metric(ax1, curves, "iterations", cast=lambda v: int(v))
    ax1.set_ylabel("MinRes iterations")
    _plot_metric(ax2, curves, "kappa")
    ax2.set_ylabel("kappa(BA)")
    ax2.set_yscale("log")
    fig.suptitle(f"{rows[0]['problem']} / {rows[0]['precond']} preconditioner")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
