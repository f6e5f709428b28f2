"""Full-chip orchestration tests: splitting + stitching invariants, exact
tiled metrics, the external-mask engine, and determinism."""
import json

import numpy as np
import pytest

from viaopc.datagen import GenRules, gen_chip, insert_sraf
from viaopc.fullchip import (
    StitchError,
    WindowResult,
    _assemble_mask,
    _base_patch,
    _check_overlap_agreement,
    _sraf_residuals,
    run_full_chip,
    timing_report,
)
from viaopc.ilt import IltConfig
from viaopc.layout import Layout, Rect, Via
from viaopc.litho import LithoModel, simulate_corners
from viaopc.splitter import DbscanParams, SplitParams, split_full_chip
from viaopc.raster import rasterize

FAST_MODEL = LithoModel(sigmas=(12.0,), weights=(1.0,), support=65)
FAST_ILT = IltConfig(steps=3)
RULES = GenRules()


def single_via_chip():
    return Layout(Rect(0, 0, 4096, 4096), vias=[Via(1, Rect(2013, 2013, 70, 70))])


def row_chip(n=7, start=1500, pitch=150, y=2013):
    vias = [Via(i + 1, Rect(start + i * pitch - 35, y, 70, 70)) for i in range(n)]
    chip = Layout(Rect(0, 0, 4096, 4096), vias=vias)
    return insert_sraf(chip, RULES, context=chip.bounds)


def test_empty_chip_run(tmp_path):
    chip = Layout(Rect(0, 0, 4096, 4096))
    run = run_full_chip(chip, FAST_MODEL, ilt_cfg=FAST_ILT, out_dir=tmp_path)
    assert run.report["windows"] == 0 and run.report["vias"] == 0
    assert run.report["whole_chip"] == {"l2_nm2": 0, "pvband_nm2": 0}
    assert run.report["window_sum"] == {"l2_nm2": 0, "pvband_nm2": 0}
    assert (tmp_path / "windows.json").exists()
    assert (tmp_path / "mask.layout").exists()
    assert json.loads((tmp_path / "report.json").read_text()) == run.report


def test_single_window_whole_equals_window():
    run = run_full_chip(single_via_chip(), FAST_MODEL, ilt_cfg=FAST_ILT)
    assert run.report["windows"] == 1
    assert run.report["whole_chip"]["l2_nm2"] == run.report["window_sum"]["l2_nm2"]
    assert run.report["whole_chip"]["pvband_nm2"] == run.report["window_sum"]["pvband_nm2"]
    assert run.report["relative_gap"] == {"l2": 0.0, "pvband": 0.0}
    assert run.report["via_coverage"] == {"printed": 1, "total": 1, "missing_ids": []}


def test_overlapping_windows_agree_and_stitch():
    chip = row_chip()
    run = run_full_chip(chip, FAST_MODEL, ilt_cfg=FAST_ILT)
    assert run.report["windows"] == 2
    r0, r1 = (r.rect for r in run.results)
    assert r0.intersects(r1)
    # stitched polygons rasterize back to exactly the OR of the patches
    region = Rect(1024, 1024, 2048, 2048)
    img = rasterize(run.stitched, (2048, 2048), 2048)
    pieces = [(r.rect, r.patch) for r in run.results]
    pieces += _sraf_residuals(chip, [r.rect for r in run.results])
    assert np.array_equal(img["mask"], _assemble_mask(region, pieces))
    assert run.report["via_coverage"]["missing_ids"] == []


def test_disagreeing_overlap_raises():
    a = WindowResult(0, Rect(0, 0, 8, 8), np.zeros((8, 8), np.uint8), "ilt")
    b_patch = np.zeros((8, 8), np.uint8)
    b_patch[0, 0] = 1  # chip pixel (4, 4) seen differently by the two windows
    b = WindowResult(1, Rect(4, 4, 8, 8), b_patch, "ilt")
    with pytest.raises(StitchError):
        _check_overlap_agreement([a, b])
    b.patch = np.zeros((8, 8), np.uint8)
    _check_overlap_agreement([a, b])  # agreeing overlap passes


def test_sraf_residuals_clip_window_parts():
    chip = Layout(Rect(0, 0, 1024, 1024), srafs=[Rect(0, 0, 30, 90)])
    pieces = _sraf_residuals(chip, [Rect(0, 50, 100, 100)])
    assert len(pieces) == 1
    bar, grid = pieces[0]
    assert bar == Rect(0, 0, 30, 90)
    assert grid[:50].all() and not grid[50:].any()
    # fully covered bar leaves nothing
    assert _sraf_residuals(chip, [Rect(0, 0, 100, 100)]) == []


def test_masks_engine_uses_external_masks(tmp_path):
    chip = single_via_chip()
    ws = split_full_chip(chip, DbscanParams(), SplitParams())
    w = ws.windows[0]
    base = _base_patch(chip, w)
    from viaopc.raster import write_grid_png
    write_grid_png(base, tmp_path / "w0000.mask.png")
    run = run_full_chip(chip, FAST_MODEL, engine=f"masks:{tmp_path}")
    assert run.results[0].source == "masks" and run.results[0].flagged is None

    # oracle: simulate the base mask over the window with a 128 px halo
    img = rasterize(chip, w.center, w.size + 256)
    wafers = simulate_corners(((img["design"] > 0) | (img["sraf"] > 0)).astype(np.uint8),
                              FAST_MODEL)
    core = np.s_[128:128 + w.size, 128:128 + w.size]
    expect = int(np.sum(wafers.nominal[core] != img["design"][core]))
    assert run.report["per_window"][0]["l2_nm2"] == expect
    assert run.report["whole_chip"]["l2_nm2"] == expect


def test_masks_engine_flags_missing_mask(tmp_path):
    run = run_full_chip(single_via_chip(), FAST_MODEL, engine=f"masks:{tmp_path}")
    row = run.report["per_window"][0]
    assert row["source"] == "base" and row["flagged"].startswith("missing")
    assert run.report["windows"] == 1  # run continued


def test_identical_clusters_share_one_optimization():
    chip = Layout(Rect(0, 0, 8192, 8192),
                  vias=[Via(1, Rect(965, 965, 70, 70)), Via(2, Rect(4965, 4965, 70, 70))])
    run = run_full_chip(chip, FAST_MODEL, ilt_cfg=FAST_ILT)
    assert run.report["windows"] == 2
    assert np.array_equal(run.results[0].patch, run.results[1].patch)


def test_jobs_parallel_matches_serial(tmp_path):
    chip = Layout(Rect(0, 0, 8192, 8192),
                  vias=[Via(1, Rect(965, 965, 70, 70)),
                        Via(2, Rect(4965, 4965, 70, 70)),
                        Via(3, Rect(5165, 4965, 70, 70))])
    runs = {}
    for jobs in (1, 2):
        out = tmp_path / f"j{jobs}"
        runs[jobs] = run_full_chip(chip, FAST_MODEL, ilt_cfg=FAST_ILT,
                                   out_dir=out, jobs=jobs)
    assert runs[1].report == runs[2].report
    for rel in ["report.json", "mask.layout", "windows.json", "windows/w0000.mask.png"]:
        assert (tmp_path / "j1" / rel).read_bytes() == (tmp_path / "j2" / rel).read_bytes()


def test_rerun_byte_identical_and_timing(tmp_path):
    chip = row_chip(4)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        run = run_full_chip(chip, FAST_MODEL, ilt_cfg=FAST_ILT, out_dir=out)
        t = timing_report(run)
        assert t["preparation_s"] + t["inference_s"] == pytest.approx(t["total_s"], abs=1e-5)
        assert t["inference_s"] > 0
        files = {p.relative_to(out).as_posix(): p.read_bytes()
                 for p in sorted(out.rglob("*")) if p.is_file() and p.name != "timing.json"}
        outs.append(files)
    assert outs[0].keys() == outs[1].keys() and outs[0] == outs[1]


def test_generated_chip_gap_is_small(tmp_path):
    chip = gen_chip(20, RULES, np.random.default_rng(3), with_sraf=True)
    run = run_full_chip(chip, FAST_MODEL, ilt_cfg=IltConfig(steps=6), out_dir=tmp_path)
    assert run.report["vias"] == 20
    assert run.report["via_coverage"]["missing_ids"] == []
    assert run.report["relative_gap"]["l2"] < 0.05
    assert all(r["flagged"] is None for r in run.report["per_window"])
    assert (tmp_path / "windows" / "w0000.trace.csv").exists()
