"""Figure rendering for reports: loss traces, dataset summaries, metric
distributions, chip maps, and split-vs-whole comparisons. Everything renders
headlessly to PNG files and returns the written paths."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .layout import Layout  # noqa: E402

_DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_trace(trace, path, title: str = "relaxed loss per step") -> Path:
    steps = [t[0] for t in trace]
    losses = [t[1] for t in trace]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, losses, lw=1.5)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_title(title)
    if losses and min(losses) > 0:
        ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_grid(grid, path, title: str | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(np.asarray(grid), origin="lower", cmap="gray", interpolation="nearest")
    if title:
        ax.set_title(title)
    ax.set_xlabel("x (nm)")
    ax.set_ylabel("y (nm)")
    return _save(fig, path)


def plot_intensity(intensity, threshold: float, path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(np.asarray(intensity), origin="lower", cmap="magma",
                   interpolation="nearest")
    ax.contour(np.asarray(intensity), levels=[threshold], colors="cyan", linewidths=0.8)
    fig.colorbar(im, ax=ax, label="aerial intensity")
    ax.set_title(f"intensity (resist threshold {threshold})")
    return _save(fig, path)


def dataset_summary(manifest: dict, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    groups = sorted(manifest.get("groups", {}), key=int)
    counts = [len(manifest["groups"][g]) for g in groups]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(groups, counts, color="steelblue")
    ax.set_xlabel("vias per clip (group)")
    ax.set_ylabel("cases")
    ax.set_title("dataset cases per group")
    paths = [_save(fig, out_dir / "dataset_counts.png")]

    l2s = {g: [c["l2_nm2"] for c in manifest["groups"][g]] for g in groups}
    fig, ax = plt.subplots(figsize=(6, 4))
    data = [l2s[g] for g in groups]
    if any(data):
        ax.boxplot(data, tick_labels=groups)
    ax.set_xlabel("vias per clip (group)")
    ax.set_ylabel("L2 (nm^2)")
    ax.set_title("ground-truth mask L2 by group")
    paths.append(_save(fig, out_dir / "dataset_l2.png"))
    return paths


def evaluate_figures(report, out_dir) -> list[Path]:
    """Bar/box figures for a MetricsReport: group means and distributions."""
    out_dir = Path(out_dir)
    paths = []
    groups = sorted(report.group_means)
    for column, label in (("l2_nm2", "L2 (nm^2)"), ("pvband_nm2", "PV band (nm^2)")):
        means = [report.group_means[g].get(column) for g in groups]
        if not groups or all(m is None for m in means):
            continue
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.bar([str(g) for g in groups], [m or 0 for m in means], color="steelblue")
        overall = report.overall.get(column)
        if overall is not None:
            ax.axhline(overall, color="crimson", ls="--", lw=1, label="overall mean")
            ax.legend()
        ax.set_xlabel("group (via count)")
        ax.set_ylabel(label)
        ax.set_title(f"mean {label} by group")
        paths.append(_save(fig, out_dir / f"{column}_by_group.png"))

    vals = [r.l2_nm2 for r in report.rows if r.l2_nm2 is not None]
    if vals:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.hist(vals, bins=min(40, max(5, len(vals) // 5 + 1)), color="steelblue")
        ax.set_xlabel("L2 (nm^2)")
        ax.set_ylabel("cases")
        ax.set_title("per-case L2 distribution")
        paths.append(_save(fig, out_dir / "l2_histogram.png"))
    return paths


def chip_map(layout: Layout, window_set, path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 7))
    b = layout.bounds
    ax.add_patch(plt.Rectangle((b.x, b.y), b.w, b.h, fill=False, ec="black", lw=1))
    if layout.vias:
        xs = [v.rect.x + v.rect.w / 2 for v in layout.vias]
        ys = [v.rect.y + v.rect.h / 2 for v in layout.vias]
        ax.plot(xs, ys, ".", ms=3, color="crimson", label=f"{len(layout.vias)} vias")
    for w in window_set.windows:
        r = w.rect()
        ax.add_patch(plt.Rectangle((r.x, r.y), r.w, r.h, fill=False, ec="steelblue", lw=0.8))
    ax.set_xlim(b.x - b.w * 0.02, b.x2 + b.w * 0.02)
    ax.set_ylim(b.y - b.h * 0.02, b.y2 + b.h * 0.02)
    ax.set_aspect("equal")
    ax.set_title(f"{len(window_set.windows)} windows")
    if layout.vias:
        ax.legend(loc="upper right")
    return _save(fig, path)


def split_vs_whole(report: dict, path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    for ax, key, label in ((axes[0], "l2_nm2", "L2 (nm^2)"),
                           (axes[1], "pvband_nm2", "PV band (nm^2)")):
        whole = report["whole_chip"][key]
        part = report["window_sum"][key]
        ax.bar(["whole chip", "window sum"], [whole, part],
               color=["steelblue", "darkorange"])
        gap = report["relative_gap"]["l2" if key == "l2_nm2" else "pvband"]
        ax.set_title(f"{label}  (gap {gap:.2%})")
    fig.suptitle("whole-chip vs summed window metrics")
    return _save(fig, path)
