"""Matplotlib figures written next to CLI reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FAMILY_MARKERS = {"line-chain": "o", "assembly-tree": "s", "grid-mesh": "^"}


def plot_bench(rows: list[dict], outdir) -> list[Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for fam in sorted({r["family"] for r in rows}):
        sel = [r for r in rows if r["family"] == fam]
        ax.scatter([r["machines"] for r in sel], [r["objective"] or 0.0 for r in sel],
                   marker=FAMILY_MARKERS.get(fam, "o"), label=fam)
    ax.set_xlabel("machines")
    ax.set_ylabel("throughput (products / timestep)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    p = outdir / "bench_throughput.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    sel = [r for r in rows if r.get("mean_step_ms") is not None]
    if sel:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.scatter([r["agents_used"] for r in sel], [r["mean_step_ms"] for r in sel])
        ax.set_xlabel("agents")
        ax.set_ylabel("mean generator step (ms)")
        fig.tight_layout()
        p = outdir / "bench_step_time.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written


def plot_search_trace(trace, path) -> Path:
    """Objective of every solve attempt against elapsed time."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    xs = [e.elapsed for e in trace]
    ys = [e.objective if e.objective is not None else np.nan for e in trace]
    ax.plot(xs, ys, ".", label="attempt")
    best, inc = -np.inf, []
    for y in ys:
        if not np.isnan(y):
            best = max(best, y)
        inc.append(best if np.isfinite(best) else np.nan)
    ax.step(xs, inc, where="post", label="incumbent")
    ax.set_xlabel("elapsed (s)")
    ax.set_ylabel("throughput")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_layout(instance, emb, path) -> Path:
    """Grid picture with road cells shaded by the number of agents entering per cycle."""
    path = Path(path)
    lay = instance.layout
    img = np.full((lay.height, lay.width), np.nan)
    flow = emb.b_in.sum(axis=(1, 2)) if emb is not None else np.zeros(len(instance.roads))
    for rd in instance.roads:
        for c in rd.path:
            img[c[1], c[0]] = flow[rd.id]
    fig, ax = plt.subplots(figsize=(max(3, lay.width / 4), max(3, lay.height / 4)))
    im = ax.imshow(img, cmap="viridis", interpolation="nearest")
    for j in instance.junctions:
        ax.plot(j.cell[0], j.cell[1], "ks", ms=4)
    for m in instance.machines:
        if m.input_cell is not None:
            ax.plot(*m.input_cell, "rv", ms=4)
        if m.output_cell is not None:
            ax.plot(*m.output_cell, "w^", ms=4)
    fig.colorbar(im, ax=ax, label="agents entering per cycle")
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
