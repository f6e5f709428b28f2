"""Synthetic via-layer data factory.

Pipeline per case: random via placement inside the central window, rule-based
scatter-bar insertion pruned by design-rule checking, reference OPC on the
center crop, recovery into the full context, lithography simulation across
process corners, and emission of aligned design/sraf/mask/wafer grids in
layout, PNG, and binary-grid form.

Everything is a pure function of (rules, seed): per-case RNG streams derive
from (master seed, group, index), so parallel generation is byte-identical to
serial generation.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ilt import IltConfig, optimize_mask
from .layout import Layout, Rect, Via, save_layout
from .litho import LithoModel, pv_band, simulate_corners
from .metrics import l2_error
from .raster import (
    center_crop_grid,
    extract_polygons,
    rasterize,
    recover_grid,
    write_grid_bin,
    write_grid_png,
    write_rgb_png,
)

CASE_CHANNELS = ("design", "sraf", "mask", "wafer")


class GenError(RuntimeError):
    """Generation failed (placement exhaustion or rule violation)."""


@dataclass(frozen=True)
class GenRules:
    """Geometry rules for clip generation and scatter-bar insertion."""

    via_size: int = 70
    window: int = 1024
    context: int = 2048
    min_via_spacing: int = 120
    via_count_min: int = 1
    via_count_max: int = 6
    sraf_width: int = 30     # bar thickness, perpendicular to the via edge
    sraf_length: int = 90    # bar extent, parallel to the via edge
    sraf_offset: int = 100   # gap between via edge and bar
    sraf_min_spacing: int = 40

    def __post_init__(self):
        numeric = [self.via_size, self.window, self.context, self.min_via_spacing,
                   self.sraf_width, self.sraf_length, self.sraf_offset,
                   self.sraf_min_spacing]
        if any(v <= 0 for v in numeric):
            raise ValueError("all rule dimensions must be positive")
        if self.window > self.context or self.window % 2 or self.context % 2:
            raise ValueError("window/context must be even with window <= context")
        if not (1 <= self.via_count_min <= self.via_count_max):
            raise ValueError("invalid via count range")
        if self.via_size > self.window:
            raise ValueError("via cannot exceed the placement window")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "GenRules":
        return cls(**d)


@dataclass(frozen=True)
class Violation:
    kind: str       # "via_spacing" | "sraf_spacing" | "bounds"
    detail: str


def rect_distance(a: Rect, b: Rect) -> float:
    """Euclidean gap between two rectangles (0 when they touch or overlap)."""
    dx = max(b.x - a.x2, a.x - b.x2, 0)
    dy = max(b.y - a.y2, a.y - b.y2, 0)
    return math.hypot(dx, dy)


def _default_context(layout: Layout, rules: GenRules) -> Rect:
    """Centered rules-context square, clipped to the layout bounds."""
    b = layout.bounds
    side = min(rules.context, b.w, b.h)
    return Rect(b.x + (b.w - side) // 2, b.y + (b.h - side) // 2, side, side)


def check_drc(layout: Layout, rules: GenRules, context: Rect | None = None) -> list[Violation]:
    """Every spacing pair below minimum plus every shape escaping the context."""
    ctx = _default_context(layout, rules) if context is None else context
    out: list[Violation] = []
    vias = layout.vias
    if len(vias) > 1:
        c = np.array([[v.rect.x + v.rect.w / 2, v.rect.y + v.rect.h / 2] for v in vias])
        d = np.hypot(c[:, 0:1] - c[None, :, 0], c[:, 1:2] - c[None, :, 1])
        for i, j in zip(*np.nonzero(np.triu(d < rules.min_via_spacing, k=1))):
            out.append(Violation(
                "via_spacing",
                f"vias {vias[i].id} and {vias[j].id}: center distance "
                f"{d[i, j]:.1f} < {rules.min_via_spacing}"))
    shapes = [("via", v.id, v.rect) for v in vias]
    for i, s in enumerate(layout.srafs):
        bar = ("sraf", i, s)
        for kind, ref, r in shapes:
            gap = rect_distance(s, r)
            if gap < rules.sraf_min_spacing:
                out.append(Violation(
                    "sraf_spacing",
                    f"sraf {i} to {kind} {ref}: gap {gap:.1f} < {rules.sraf_min_spacing}"))
        shapes.append(bar)
    for kind, ref, r in [("via", v.id, v.rect) for v in vias] + \
                        [("sraf", i, s) for i, s in enumerate(layout.srafs)]:
        if not ctx.contains_rect(r):
            out.append(Violation("bounds", f"{kind} {ref} escapes context {ctx}"))
    return out


def _sraf_candidates(via: Via, rules: GenRules):
    """The four scatter bars for one via, in fixed N, S, E, W order."""
    r = via.rect
    cx, cy = r.x + r.w // 2, r.y + r.h // 2
    off, wid, ln = rules.sraf_offset, rules.sraf_width, rules.sraf_length
    half = ln // 2
    return [
        ("N", Rect(cx - half, r.y2 + off, ln, wid)),
        ("S", Rect(cx - half, r.y - off - wid, ln, wid)),
        ("E", Rect(r.x2 + off, cy - half, wid, ln)),
        ("W", Rect(r.x - off - wid, cy - half, wid, ln)),
    ]


def insert_sraf(layout: Layout, rules: GenRules, context: Rect | None = None) -> Layout:
    """Add up to four scatter bars per via, dropping any candidate that
    escapes the context or comes closer than the spacing rule to a via or an
    already-accepted bar. Candidates are considered by via id, then N/S/E/W,
    so the result is deterministic."""
    if not layout.vias:
        return layout
    ctx = _default_context(layout, rules) if context is None else context
    accepted = list(layout.srafs)
    via_rects = [v.rect for v in layout.vias]
    for via in layout.vias:
        for _, bar in _sraf_candidates(via, rules):
            if not ctx.contains_rect(bar):
                continue
            if any(rect_distance(bar, r) < rules.sraf_min_spacing for r in via_rects):
                continue
            if any(rect_distance(bar, s) < rules.sraf_min_spacing for s in accepted):
                continue
            accepted.append(bar)
    return layout.replace(srafs=tuple(accepted))


_MAX_PLACEMENT_ATTEMPTS = 10_000


def gen_design(via_count: int, rules: GenRules, rng: np.random.Generator) -> Layout:
    """Place via_count non-overlapping vias inside the central window by
    rejection sampling; pairwise center distance honors min_via_spacing."""
    if not (rules.via_count_min <= via_count <= rules.via_count_max):
        raise ValueError(
            f"via_count {via_count} outside "
            f"[{rules.via_count_min}, {rules.via_count_max}]")
    off = (rules.context - rules.window) // 2
    lo, hi = off, off + rules.window - rules.via_size  # inclusive origin range
    centers: list[tuple[float, float]] = []
    origins: list[tuple[int, int]] = []
    attempts = 0
    while len(origins) < via_count:
        attempts += 1
        if attempts > _MAX_PLACEMENT_ATTEMPTS:
            raise GenError(f"could not place {via_count} vias after {attempts - 1} attempts")
        x = int(rng.integers(lo, hi + 1))
        y = int(rng.integers(lo, hi + 1))
        cx, cy = x + rules.via_size / 2, y + rules.via_size / 2
        if all(math.hypot(cx - px, cy - py) >= rules.min_via_spacing for px, py in centers):
            origins.append((x, y))
            centers.append((cx, cy))
    bounds = Rect(0, 0, rules.context, rules.context)
    vias = [Via(i + 1, Rect(x, y, rules.via_size, rules.via_size))
            for i, (x, y) in enumerate(origins)]
    return Layout(bounds, vias=vias)


def gen_chip(n_vias: int, rules: GenRules, rng: np.random.Generator, *,
             anchor_spacing: int = 2600, cluster_size_range: tuple[int, int] = (1, 5),
             cluster_radius: int = 220, jitter: int = 400, with_sraf: bool = False) -> Layout:
    """A full-chip via layout: clusters of vias scattered on a jittered anchor
    grid. Knobs control density (anchor_spacing, jitter) and cluster shape;
    spacing inside a cluster still honors min_via_spacing."""
    if n_vias <= 0:
        raise ValueError("n_vias must be positive")
    lo_c, hi_c = cluster_size_range
    if not (1 <= lo_c <= hi_c):
        raise ValueError("invalid cluster size range")
    # size the anchor grid for the worst case (every cluster drawing the
    # minimum size) so placement can never spill past the allocated rows
    n_cells = max(1, math.ceil(n_vias / lo_c))
    cols = math.ceil(math.sqrt(n_cells))
    rows = math.ceil(n_cells / cols)
    margin = cluster_radius + rules.via_size + jitter + 64
    side_w = cols * anchor_spacing + 2 * margin
    side_h = rows * anchor_spacing + 2 * margin
    side = max(side_w, side_h)
    side += side % 2
    bounds = Rect(0, 0, side, side)

    vias: list[Via] = []
    attempts = 0
    cell = 0
    while len(vias) < n_vias:
        ci, cj = cell % cols, cell // cols
        cell += 1
        if cell > cols * rows:  # unreachable: each cell places >= lo_c vias
            raise GenError("anchor grid exhausted before placing all vias")
        ax = margin + ci * anchor_spacing + anchor_spacing // 2 + int(rng.integers(-jitter, jitter + 1))
        ay = margin + cj * anchor_spacing + anchor_spacing // 2 + int(rng.integers(-jitter, jitter + 1))
        want = min(int(rng.integers(lo_c, hi_c + 1)), n_vias - len(vias))
        centers: list[tuple[float, float]] = []
        while len(centers) < want:
            attempts += 1
            if attempts > _MAX_PLACEMENT_ATTEMPTS * max(1, n_vias // 100):
                raise GenError("cluster placement exhausted")
            r = cluster_radius * math.sqrt(rng.random())
            th = 2 * math.pi * rng.random()
            cx, cy = ax + r * math.cos(th), ay + r * math.sin(th)
            if all(math.hypot(cx - px, cy - py) >= rules.min_via_spacing for px, py in centers):
                centers.append((cx, cy))
        for cx, cy in centers:
            x = int(round(cx - rules.via_size / 2))
            y = int(round(cy - rules.via_size / 2))
            vias.append(Via(len(vias) + 1, Rect(x, y, rules.via_size, rules.via_size)))
    chip = Layout(bounds, vias=vias)
    if with_sraf:
        chip = insert_sraf(chip, rules, context=bounds)
    return chip


def gen_case(via_count: int, rules: GenRules, model: LithoModel, ilt_cfg: IltConfig,
             rng: np.random.Generator, out_dir, case_id: str,
             extra_meta: dict | None = None) -> dict:
    """Generate one paired case and write it under out_dir.

    Emits {design,sraf,mask,wafer}.{layout,png,bin}, an RGB inspection image,
    and meta.json. Returns the metadata dict."""
    layout = insert_sraf(gen_design(via_count, rules, rng), rules)
    violations = check_drc(layout, rules)
    if violations:
        raise GenError(f"generated layout violates rules: {violations[0].detail}")

    ctx = rules.context
    img = rasterize(layout, (ctx // 2, ctx // 2), ctx)
    design, sraf = img["design"], img["sraf"]
    result = optimize_mask(center_crop_grid(design, rules.window),
                           center_crop_grid(sraf, rules.window), model, ilt_cfg)
    base = ((design > 0) | (sraf > 0)).astype(np.uint8)
    mask = recover_grid(result.mask, base)
    wafers = simulate_corners(mask, model)
    wafer = wafers.nominal

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grids = {"design": design, "sraf": sraf, "mask": mask, "wafer": wafer}
    layers = {
        "design": layout.replace(srafs=(), mask_polys=(), wafer_polys=()),
        "sraf": layout.replace(vias=(), mask_polys=(), wafer_polys=()),
        "mask": Layout(layout.bounds, mask_polys=extract_polygons(mask)),
        "wafer": Layout(layout.bounds, wafer_polys=extract_polygons(wafer)),
    }
    for role in CASE_CHANNELS:
        save_layout(layers[role], out / f"{role}.layout")
        write_grid_png(grids[role], out / f"{role}.png")
        write_grid_bin(grids[role], out / f"{role}.bin")
    write_rgb_png(design, sraf, mask, out / "inspect.png")

    meta = {
        "case_id": case_id,
        "via_count": via_count,
        "l2_nm2": int(l2_error(wafer, design)),
        "pvband_nm2": int(pv_band(wafers)),
        "ilt_final_loss": float(result.final_loss),
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(out / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return meta


_WORKER_CACHE: dict[str, tuple] = {}


def _case_task(args) -> tuple[str, dict | None, str | None]:
    (group, index, seed, root, rules_d, model_d, cfg_d, case_id, split) = args
    key = json.dumps([rules_d, model_d, cfg_d], sort_keys=True)
    if key not in _WORKER_CACHE:
        _WORKER_CACHE[key] = (GenRules.from_dict(rules_d),
                              LithoModel.from_dict(model_d),
                              IltConfig.from_dict(cfg_d))
    rules, model, cfg = _WORKER_CACHE[key]
    rng = np.random.default_rng(np.random.SeedSequence([seed, group, index]))
    out_dir = Path(root) / str(group) / case_id
    try:
        meta = gen_case(group, rules, model, cfg, rng, out_dir, case_id,
                        extra_meta={"group": group, "split": split,
                                    "seed": [seed, group, index]})
        return case_id, meta, None
    except Exception as exc:  # record, keep generating the rest
        return case_id, None, f"{type(exc).__name__}: {exc}"


def build_dataset(per_group_counts: dict[int, int], rules: GenRules, model: LithoModel,
                  ilt_cfg: IltConfig, out_root, seed: int = 0,
                  train_fraction: float = 0.8, jobs: int = 1) -> dict:
    """Generate counts[g] cases for each group g (= via count) under
    out_root/<g>/<case-id>/, split train/val by index, and write manifest.json.
    Failures are recorded in the manifest without aborting the run."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    tasks = []
    for group in sorted(per_group_counts):
        count = per_group_counts[group]
        if count < 0:
            raise ValueError(f"negative count for group {group}")
        n_train = round(count * train_fraction)
        for index in range(count):
            case_id = f"g{group}_c{index:05d}"
            split = "train" if index < n_train else "val"
            tasks.append((group, index, seed, str(root), rules.to_dict(),
                          model.to_dict(), ilt_cfg.to_dict(), case_id, split))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_case_task, tasks))
    else:
        results = [_case_task(t) for t in tasks]

    groups: dict[str, list] = {str(g): [] for g in sorted(per_group_counts)}
    counts = {"train": 0, "val": 0}
    failures = []
    for task, (case_id, meta, err) in zip(tasks, results):
        group, split = task[0], task[8]
        if err is not None:
            failures.append({"case_id": case_id, "group": group, "error": err})
            continue
        counts[split] += 1
        groups[str(group)].append({
            "case_id": case_id,
            "path": f"{group}/{case_id}",
            "split": split,
            "via_count": meta["via_count"],
            "l2_nm2": meta["l2_nm2"],
            "pvband_nm2": meta["pvband_nm2"],
        })
    manifest = {
        "seed": seed,
        "train_fraction": train_fraction,
        "rules": rules.to_dict(),
        "groups": groups,
        "counts": counts,
        "failures": failures,
    }
    with open(root / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest
