"""Static figures rendered next to the delimited outputs.

Figures are plain matplotlib PNGs written via the Agg backend; they carry
no interactive state and are a convenience view of the same data the CSV
holds (the CSV remains the determinism contract).
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_sweep_figure(sweep_rows, path) -> None:
    """Worst observed and certified ratios per n against the 1 + 1/(n-1) envelope."""
    ns = [r.n for r in sweep_rows]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(ns, [r.bound for r in sweep_rows], "k--", label="1 + eps envelope")
    ax.plot(ns, [r.max_certified_ratio for r in sweep_rows], "o-",
            label="max certified ratio")
    ax.plot(ns, [r.max_ratio for r in sweep_rows], "s-", label="max observed ratio")
    ax.set_xlabel("number of agents n")
    ax.set_ylabel("liquid-welfare ratio")
    ax.set_title("Price of anarchy versus market size")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_run_figure(rows, path, bound: float | None = None) -> None:
    """Observed versus certified ratio per converged row."""
    good = [r for r in rows
            if r.converged and math.isfinite(r.ratio)
            and math.isfinite(r.certified_ratio)]
    fig, ax = plt.subplots(figsize=(5.0, 5.0))
    if good:
        xs = [r.certified_ratio for r in good]
        ys = [r.ratio for r in good]
        ax.scatter(xs, ys, s=18, alpha=0.7)
        lim = max(xs + ys + ([bound] if bound else [])) * 1.05
        ax.plot([1.0, lim], [1.0, lim], "k:", linewidth=1,
                label="observed = certified")
        if bound is not None:
            ax.axvline(bound, color="crimson", linestyle="--", linewidth=1,
                       label=f"certified bound {bound:g}")
        ax.set_xlim(0.95, lim)
        ax.set_ylim(0.95, lim)
        ax.legend()
    else:
        ax.text(0.5, 0.5, "no converged rows", ha="center", va="center")
    ax.set_xlabel("certified ratio (dual objective / equilibrium welfare)")
    ax.set_ylabel("observed ratio (optimum / equilibrium welfare)")
    ax.set_title("Certified versus observed efficiency loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
