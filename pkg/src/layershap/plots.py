"""Figure rendering for reports, training curves, and diagnostics.

Every report-producing CLI path writes one of these PNGs next to its
delimited output. All functions are headless (Agg backend) and write to
an explicit path.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_loss_curve",
    "plot_contributions",
    "plot_rank_volatility",
    "plot_convergence",
]


def plot_loss_curve(losses, path, decay_every: int | None = None) -> None:
    """Per-epoch training loss on a log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = np.arange(len(losses))
    ax.semilogy(epochs, losses, lw=1.5, color="tab:blue")
    if decay_every:
        for e in range(decay_every, len(losses), decay_every):
            ax.axvline(e, color="grey", ls=":", lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE")
    ax.set_title("surrogate training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_contributions(phi, path, remove_counts=()) -> None:
    """Per-layer estimated contributions; lowest bars are pruned first."""
    phi = np.asarray(phi, dtype=float)
    order = np.argsort(phi, kind="stable")
    colors = np.full(len(phi), "tab:blue", dtype=object)
    if remove_counts:
        colors[order[: max(remove_counts)]] = "tab:orange"
    fig, ax = plt.subplots(figsize=(max(6, 0.25 * len(phi)), 4))
    ax.bar(np.arange(len(phi)), phi, color=list(colors))
    ax.set_xlabel("layer")
    ax.set_ylabel("estimated contribution")
    title = "layer contributions"
    if remove_counts:
        title += f" (orange: removal candidates up to n={max(remove_counts)})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_rank_volatility(entries, path) -> None:
    """Grouped bars of per-layer rank shifts, one group color per context."""
    fig, ax = plt.subplots(figsize=(8, 4))
    cmap = plt.get_cmap("tab10")
    width = 0.8 / max(1, len(entries))
    for c_idx, entry in enumerate(entries):
        xs = np.asarray(entry.layers, dtype=float) + c_idx * width
        ax.bar(xs, entry.delta_rank, width=width, color=cmap(c_idx % 10),
               label=f"context {entry.context.to_string()}")
    ax.axhline(0.0, color="black", lw=0.8)
    ax.set_xlabel("layer")
    ax.set_ylabel("rank shift vs full model")
    ax.set_title("single-removal rank volatility under pruned contexts")
    if len(entries) <= 6:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_convergence(rows, path) -> None:
    """Median rank agreement against exact values as Q grows."""
    qs = sorted({r["q"] for r in rows})
    medians = [np.median([r["spearman"] for r in rows if r["q"] == q]) for q in qs]
    fig, ax = plt.subplots(figsize=(6, 4))
    for q in qs:
        vals = [r["spearman"] for r in rows if r["q"] == q]
        ax.scatter([q] * len(vals), vals, s=12, alpha=0.4, color="tab:blue")
    ax.plot(qs, medians, marker="o", color="tab:red", label="median")
    ax.set_xscale("log")
    ax.set_xlabel("Monte Carlo base masks Q")
    ax.set_ylabel("Spearman rho vs exact")
    ax.set_title("estimator convergence")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
