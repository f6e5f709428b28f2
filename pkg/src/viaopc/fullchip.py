"""Full-chip orchestration: window splitting, per-window mask synthesis,
overlap-checked stitching, and whole-chip metrics on a sparse tile cover.

Per window the flow is rasterize-context -> center-crop -> optimize (or load
an external mask) -> recover -> place the central window-sized patch. Windows
produced from one via cluster can overlap; to make their overlapping pixels
agree exactly, the optimizer runs in a canonical frame anchored to the local
geometry's bounding box and every window takes a slice of that one grid.
The canonical frame also acts as a memo key, so identically-shaped clusters
anywhere on the chip are optimized once.

Stitching ORs the window patches together and raises StitchError if two
patches ever disagree on a shared pixel. Whole-chip L2 and PV band are exact:
they are summed over fixed 512-pixel tiles that cover all geometry, each tile
simulated with a halo wider than the kernel influence radius, so pixels
outside the tile cover provably contribute nothing.
"""
from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ilt import IltConfig, optimize_mask, save_trace
from .layout import Layout, Rect, Via, save_layout
from .litho import LithoModel, simulate_corners
from .raster import (
    _fill_rects,
    center_crop_grid,
    extract_polygons,
    rasterize,
    read_grid_png,
    recover_grid,
    write_grid_png,
)
from .splitter import DbscanParams, SplitParams, WindowSet, save_windows, split_full_chip

TILE = 512


class StitchError(RuntimeError):
    """Two windows wrote disagreeing values to the same mask pixel."""


@dataclass
class WindowResult:
    index: int
    rect: Rect
    patch: np.ndarray            # window-sized uint8 mask patch
    source: str                  # "ilt" | "masks" | "base"
    flagged: str | None = None
    trace: list = field(default_factory=list)


@dataclass
class FullChipRun:
    layout: Layout
    window_set: WindowSet
    results: list[WindowResult]
    stitched: Layout
    report: dict
    timing: dict


def _intersecting_shapes(layout: Layout, region: Rect):
    """(kind, rect) for every via/sraf touching region, deterministic order."""
    shapes = [("via", v.rect) for v in layout.vias if v.rect.intersects(region)]
    shapes += [("sraf", s) for s in layout.srafs if s.intersects(region)]
    return shapes


def _canonical_frame(shapes, ctx_size: int):
    """Translate shapes into a ctx-sized frame centered on their bbox.

    Returns (anchor, placed shapes) where anchor is the chip coordinate of
    frame cell (0, 0), or None when the bbox cannot fit."""
    minx = min(r.x for _, r in shapes)
    miny = min(r.y for _, r in shapes)
    maxx = max(r.x2 for _, r in shapes)
    maxy = max(r.y2 for _, r in shapes)
    if maxx - minx >= ctx_size or maxy - miny >= ctx_size:
        return None
    ox = (ctx_size - (maxx - minx)) // 2
    oy = (ctx_size - (maxy - miny)) // 2
    placed = tuple(sorted(
        (kind, r.x - minx + ox, r.y - miny + oy, r.w, r.h) for kind, r in shapes))
    return (minx - ox, miny - oy), placed


def _optimize_frame(placed, ctx_size, window_size, model, ilt_cfg):
    """Reference-OPC a canonical frame: raster, crop, optimize, recover."""
    vias = [Via(i + 1, Rect(x, y, w, h))
            for i, (kind, x, y, w, h) in enumerate(placed) if kind == "via"]
    srafs = [Rect(x, y, w, h) for kind, x, y, w, h in placed if kind == "sraf"]
    frame = Layout(Rect(0, 0, ctx_size, ctx_size), vias=vias, srafs=srafs)
    img = rasterize(frame, (ctx_size // 2, ctx_size // 2), ctx_size)
    design, sraf = img["design"], img["sraf"]
    res = optimize_mask(center_crop_grid(design, window_size),
                        center_crop_grid(sraf, window_size), model, ilt_cfg)
    base = ((design > 0) | (sraf > 0)).astype(np.uint8)
    return recover_grid(res.mask, base), res.trace


def _frame_task(args):
    key, placed, ctx_size, window_size, model_d, cfg_d = args
    mask, trace = _optimize_frame(placed, ctx_size, window_size,
                                  LithoModel.from_dict(model_d),
                                  IltConfig.from_dict(cfg_d))
    return key, mask, trace


def _base_patch(layout: Layout, window) -> np.ndarray:
    img = rasterize(layout, window.center, window.size)
    return ((img["design"] > 0) | (img["sraf"] > 0)).astype(np.uint8)


def _assemble_mask(region: Rect, pieces) -> np.ndarray:
    """OR (rect, grid) pieces into a region-sized grid (chip coordinates)."""
    out = np.zeros((region.h, region.w), dtype=np.uint8)
    for r, g in pieces:
        x0, x1 = max(r.x, region.x), min(r.x2, region.x2)
        y0, y1 = max(r.y, region.y), min(r.y2, region.y2)
        if x0 < x1 and y0 < y1:
            out[y0 - region.y:y1 - region.y, x0 - region.x:x1 - region.x] |= \
                g[y0 - r.y:y1 - r.y, x0 - r.x:x1 - r.x]
    return out


def _sraf_residuals(layout: Layout, rects: list[Rect]):
    """Parts of SRAF bars not covered by any window rectangle, as
    (rect, grid) pieces in chip coordinates."""
    pieces = []
    for bar in layout.srafs:
        if any(r.contains_rect(bar) for r in rects):
            continue
        g = np.ones((bar.h, bar.w), dtype=np.uint8)
        for r in rects:
            x0, x1 = max(r.x, bar.x), min(r.x2, bar.x2)
            y0, y1 = max(r.y, bar.y), min(r.y2, bar.y2)
            if x0 < x1 and y0 < y1:
                g[y0 - bar.y:y1 - bar.y, x0 - bar.x:x1 - bar.x] = 0
        if g.any():
            pieces.append((bar, g))
    return pieces


def _check_overlap_agreement(results: list[WindowResult]) -> None:
    for i, a in enumerate(results):
        for b in results[i + 1:]:
            ra, rb = a.rect, b.rect
            x0, x1 = max(ra.x, rb.x), min(ra.x2, rb.x2)
            y0, y1 = max(ra.y, rb.y), min(ra.y2, rb.y2)
            if x0 >= x1 or y0 >= y1:
                continue
            pa = a.patch[y0 - ra.y:y1 - ra.y, x0 - ra.x:x1 - ra.x]
            pb = b.patch[y0 - rb.y:y1 - rb.y, x0 - rb.x:x1 - rb.x]
            if not np.array_equal(pa, pb):
                raise StitchError(
                    f"windows {a.index} and {b.index} disagree on "
                    f"{int((pa != pb).sum())} pixels in their overlap")


def _overlap_components(results: list[WindowResult]):
    """Groups of window indices whose rectangles form connected overlaps."""
    parent = list(range(len(results)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, a in enumerate(results):
        for j in range(i + 1, len(results)):
            if a.rect.intersects(results[j].rect):
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(len(results)):
        groups.setdefault(find(i), []).append(i)
    return [sorted(g) for _, g in sorted(groups.items())]


def _stitched_polys(results: list[WindowResult], residuals):
    polys = []
    for group in _overlap_components(results):
        rects = [results[i].rect for i in group]
        bbox = Rect(min(r.x for r in rects), min(r.y for r in rects),
                    max(r.x2 for r in rects) - min(r.x for r in rects),
                    max(r.y2 for r in rects) - min(r.y for r in rects))
        grid = _assemble_mask(bbox, [(results[i].rect, results[i].patch) for i in group])
        for ring in extract_polygons(grid):
            polys.append(tuple((x + bbox.x, y + bbox.y) for x, y in ring))
    for bar, grid in residuals:
        for ring in extract_polygons(grid):
            polys.append(tuple((x + bar.x, y + bar.y) for x, y in ring))
    return polys


def _active_tiles(rects: list[Rect], influence: int):
    tiles = set()
    for r in rects:
        ti0 = (r.x - influence) // TILE
        ti1 = (r.x2 - 1 + influence) // TILE
        tj0 = (r.y - influence) // TILE
        tj1 = (r.y2 - 1 + influence) // TILE
        for ti in range(ti0, ti1 + 1):
            for tj in range(tj0, tj1 + 1):
                tiles.add((ti, tj))
    return sorted(tiles)


def _region_metrics(region: Rect, halo: int, pieces, layout: Layout, model: LithoModel):
    """Exact L2 / PV band / per-via print coverage inside region.

    The mask is assembled over region + halo and simulated; with halo at
    least the kernel influence radius, mask pixels outside contribute
    nothing, so the core counts equal a whole-chip computation's."""
    sim = Rect(region.x - halo, region.y - halo, region.w + 2 * halo, region.h + 2 * halo)
    mask = _assemble_mask(sim, pieces)
    design = np.zeros((region.h, region.w), dtype=np.uint8)
    _fill_rects(design, (v.rect for v in layout.vias), region.x, region.y)
    if not mask.any() and not design.any():
        return 0, 0, {}
    wafers = simulate_corners(mask, model)
    sl = np.s_[halo:halo + region.h, halo:halo + region.w]
    nominal = wafers.nominal[sl]
    l2 = int(np.sum(nominal != design))
    union = np.zeros_like(nominal, dtype=bool)
    inter = np.ones_like(nominal, dtype=bool)
    for g in wafers.grids:
        c = g[sl].astype(bool)
        union |= c
        inter &= c
    pv = int(np.sum(union & ~inter))
    printed = {}
    for v in layout.vias:
        r = v.rect
        x0, x1 = max(r.x, region.x), min(r.x2, region.x2)
        y0, y1 = max(r.y, region.y), min(r.y2, region.y2)
        if x0 < x1 and y0 < y1:
            seen = bool(nominal[y0 - region.y:y1 - region.y,
                                x0 - region.x:x1 - region.x].any())
            printed[v.id] = printed.get(v.id, False) or seen
    return l2, pv, printed


def run_full_chip(layout: Layout, model: LithoModel, *,
                  dbscan: DbscanParams | None = None,
                  split: SplitParams | None = None,
                  ilt_cfg: IltConfig | None = None,
                  engine: str = "ilt",
                  out_dir=None, jobs: int = 1) -> FullChipRun:
    """Split the chip, synthesize per-window masks, stitch, and measure.

    engine is "ilt" for the built-in optimizer or "masks:<dir>" to place
    externally generated window masks (<dir>/w0000.mask.png, ...). A missing
    or misshaped external mask flags that window and its region falls back to
    design-union-sraf. When out_dir is given, windows.json, per-window
    artifacts, the stitched mask layout, report.json, and timing.json are
    written there."""
    dbscan = dbscan or DbscanParams()
    split = split or SplitParams()
    ilt_cfg = ilt_cfg or IltConfig()
    if not (engine == "ilt" or engine.startswith("masks:")):
        raise ValueError(f"unknown engine {engine!r}")
    t_start = time.perf_counter()
    inference = 0.0

    ws = split_full_chip(layout, dbscan, split)
    ctx_size = 2 * split.window
    results: list[WindowResult] = []

    if engine == "ilt":
        frames = {}     # memo key -> (anchor per window handled below)
        window_frames = []
        for i, w in enumerate(ws.windows):
            ctx = Rect(w.center[0] - ctx_size // 2, w.center[1] - ctx_size // 2,
                       ctx_size, ctx_size)
            shapes = _intersecting_shapes(layout, ctx)
            frame = _canonical_frame(shapes, ctx_size) if shapes else None
            if frame is not None:
                anchor, placed = frame
                wr = w.rect()
                if not (0 <= wr.x - anchor[0] and wr.x2 - anchor[0] <= ctx_size
                        and 0 <= wr.y - anchor[1] and wr.y2 - anchor[1] <= ctx_size):
                    frame = None
            if frame is None:
                window_frames.append(None)
            else:
                window_frames.append((anchor, placed))
                frames.setdefault(placed, None)

        tasks = [(key, key, ctx_size, split.window, model.to_dict(), ilt_cfg.to_dict())
                 for key in frames]
        t0 = time.perf_counter()
        if jobs > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                for key, mask, trace in pool.map(_frame_task, tasks):
                    frames[key] = (mask, trace)
        else:
            for t in tasks:
                key, mask, trace = _frame_task(t)
                frames[key] = (mask, trace)
        inference += time.perf_counter() - t0

        for i, w in enumerate(ws.windows):
            wr = w.rect()
            if window_frames[i] is None:
                # degenerate frame: optimize this window's own context directly
                img = rasterize(layout, w.center, ctx_size)
                design, sraf = img["design"], img["sraf"]
                t0 = time.perf_counter()
                res = optimize_mask(center_crop_grid(design, split.window),
                                    center_crop_grid(sraf, split.window),
                                    model, ilt_cfg)
                inference += time.perf_counter() - t0
                results.append(WindowResult(i, wr, res.mask, "ilt", trace=res.trace))
                continue
            anchor, placed = window_frames[i]
            mask, trace = frames[placed]
            patch = mask[wr.y - anchor[1]:wr.y2 - anchor[1],
                         wr.x - anchor[0]:wr.x2 - anchor[0]]
            results.append(WindowResult(i, wr, patch, "ilt", trace=trace))
    else:
        mask_dir = Path(engine.split(":", 1)[1])
        for i, w in enumerate(ws.windows):
            wr = w.rect()
            path = mask_dir / f"w{i:04d}.mask.png"
            t0 = time.perf_counter()
            flagged = None
            if not path.exists():
                flagged = f"missing external mask {path.name}"
            else:
                patch = read_grid_png(path)
                if patch.shape != (w.size, w.size):
                    flagged = f"external mask {path.name} has shape {patch.shape}"
            if flagged is not None:
                patch = _base_patch(layout, w)
            inference += time.perf_counter() - t0
            results.append(WindowResult(i, wr, patch, "base" if flagged else "masks",
                                         flagged=flagged))

    _check_overlap_agreement(results)
    rects = [r.rect for r in results]
    residuals = _sraf_residuals(layout, rects)
    polys = _stitched_polys(results, residuals)
    b = layout.bounds
    x0 = min([b.x] + [r.x for r in rects])
    y0 = min([b.y] + [r.y for r in rects])
    x1 = max([b.x2] + [r.x2 for r in rects])
    y1 = max([b.y2] + [r.y2 for r in rects])
    stitched = Layout(Rect(x0, y0, x1 - x0, y1 - y0), mask_polys=polys)

    influence = model.support // 2
    halo = max(128, influence)
    pieces = [(r.rect, r.patch) for r in results] + [(b, g) for b, g in residuals]
    whole_l2 = whole_pv = 0
    printed: dict[int, bool] = {}
    for ti, tj in _active_tiles(rects + [b for b, _ in residuals], influence):
        core = Rect(ti * TILE, tj * TILE, TILE, TILE)
        l2, pv, pr = _region_metrics(core, halo, pieces, layout, model)
        whole_l2 += l2
        whole_pv += pv
        for vid, seen in pr.items():
            printed[vid] = printed.get(vid, False) or seen

    per_window = []
    sum_l2 = sum_pv = 0
    for r, w in zip(results, ws.windows):
        l2, pv, _ = _region_metrics(r.rect, halo, pieces, layout, model)
        sum_l2 += l2
        sum_pv += pv
        per_window.append({
            "index": r.index, "center": list(w.center), "size": w.size,
            "vias": list(w.via_ids), "l2_nm2": l2, "pvband_nm2": pv,
            "source": r.source, "flagged": r.flagged,
        })

    def gap(whole, part):
        return abs(whole - part) / whole if whole else 0.0

    missing = sorted(v.id for v in layout.vias if not printed.get(v.id, False))
    report = {
        "engine": engine,
        "vias": len(layout.vias),
        "windows": len(ws.windows),
        "whole_chip": {"l2_nm2": whole_l2, "pvband_nm2": whole_pv},
        "window_sum": {"l2_nm2": sum_l2, "pvband_nm2": sum_pv},
        "relative_gap": {"l2": gap(whole_l2, sum_l2), "pvband": gap(whole_pv, sum_pv)},
        "via_coverage": {"printed": len(layout.vias) - len(missing),
                         "total": len(layout.vias), "missing_ids": missing},
        "per_window": per_window,
    }
    total = time.perf_counter() - t_start
    timing = {"preparation_s": round(total - inference, 6),
              "inference_s": round(inference, 6),
              "total_s": round(total, 6)}
    run = FullChipRun(layout, ws, results, stitched, report, timing)
    if out_dir is not None:
        _write_rundir(run, Path(out_dir))
    return run


def timing_report(run: FullChipRun) -> dict:
    return dict(run.timing)


def _write_rundir(run: FullChipRun, out: Path) -> None:
    wdir = out / "windows"
    wdir.mkdir(parents=True, exist_ok=True)
    save_windows(run.window_set, out / "windows.json")
    for r in run.results:
        write_grid_png(r.patch, wdir / f"w{r.index:04d}.mask.png")
        if r.trace:
            save_trace(r.trace, wdir / f"w{r.index:04d}.trace.csv")
    save_layout(run.stitched, out / "mask.layout")
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(run.report, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(out / "timing.json", "w", encoding="utf-8") as f:
        json.dump(run.timing, f, indent=2, sort_keys=True)
        f.write("\n")
