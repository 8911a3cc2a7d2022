"""Figure rendering for sweep and ablation reports.

Line charts are written as SVG next to the CSV they visualize: retrieval
quality (mAP) on top, held-out uniformity (the negated uniformity
diagnostic, higher = more uniform) below, one series per mode.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .io import atomic_write


def _save(fig, path) -> None:
    with atomic_write(path, "wb") as fh:
        fig.savefig(fh, format="svg", metadata={"Date": None})
    plt.close(fig)


def render_sweep_chart(rows, path) -> None:
    """mAP and uniformity vs augmentation probability, one line per mode."""
    modes = list(dict.fromkeys(r.mode for r in rows))
    fig, (ax_map, ax_unif) = plt.subplots(2, 1, sharex=True, figsize=(6, 6))
    for mode in modes:
        pts = sorted(
            (r.p, r.map_score, -r.uniform_diag) for r in rows if r.mode == mode
        )
        ps = sorted(set(p for p, _, _ in pts))
        # Mean across seeds at each probability.
        map_means = [
            sum(m for p_, m, _ in pts if p_ == p) / sum(1 for p_, _, _ in pts if p_ == p)
            for p in ps
        ]
        unif_means = [
            sum(u for p_, _, u in pts if p_ == p) / sum(1 for p_, _, _ in pts if p_ == p)
            for p in ps
        ]
        ax_map.plot(ps, map_means, marker="o", label=mode)
        ax_unif.plot(ps, unif_means, marker="o", label=mode)
    ax_map.set_ylabel("held-out mAP")
    ax_unif.set_ylabel("held-out uniformity")
    ax_unif.set_xlabel("augmentation probability p")
    ax_map.legend()
    ax_map.grid(alpha=0.3)
    ax_unif.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def render_ablate_chart(rows, path) -> None:
    """mAP and uniformity per flag combination, seeds averaged."""
    names = list(dict.fromkeys(r.name for r in rows))
    xs = range(len(names))
    map_means, unif_means = [], []
    for name in names:
        sel = [r for r in rows if r.name == name]
        map_means.append(sum(r.map_score for r in sel) / len(sel))
        unif_means.append(sum(-r.uniform_diag for r in sel) / len(sel))
    fig, (ax_map, ax_unif) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    ax_map.plot(xs, map_means, marker="o")
    ax_unif.plot(xs, unif_means, marker="o")
    ax_map.set_ylabel("held-out mAP")
    ax_unif.set_ylabel("held-out uniformity")
    ax_unif.set_xticks(list(xs), names, rotation=20, ha="right")
    ax_map.grid(alpha=0.3)
    ax_unif.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path)
