"""End-to-end command-line checks: flag parsing, exit codes, machine-readable
output, file artifacts, figure emission, and byte-identical reruns."""
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from viaopc import cli
from viaopc.layout import Layout, Rect, Via, load_layout, save_layout
from viaopc.litho import LithoModel, pv_band, simulate, simulate_corners
from viaopc.raster import read_grid_bin, read_grid_png, write_grid_png
from viaopc.splitter import DbscanParams, SplitParams, save_windows, split_full_chip

FAST_MODEL = LithoModel(sigmas=(12.0,), weights=(1.0,), support=65)

FAST_CFG = """\
litho:
  sigmas: [12.0]
  weights: [1.0]
  support: 65
ilt:
  steps: 3
"""


def run_cli(argv, capsys):
    rc = cli.main(argv)
    captured = capsys.readouterr()
    lines = captured.out.strip().splitlines()
    payload = json.loads(lines[-1]) if lines else {}
    return rc, payload, captured.err


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "fast.yaml"
    p.write_text(FAST_CFG, encoding="utf-8")
    return str(p)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory, cfg_file):
    root = tmp_path_factory.mktemp("data") / "set"
    rc = cli.main(["gen", "--config", cfg_file, "--counts", "1=2",
                   "--seed", "3", "--out", str(root)])
    assert rc == 0
    return root


def _tree_bytes(root: Path, exclude_dirs=("figures",)) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_dir():
            continue
        rel = p.relative_to(root)
        if rel.parts[0] in exclude_dirs:
            continue
        out[str(rel)] = p.read_bytes()
    return out


def test_version_exits_zero(capsys):
    with pytest.raises(SystemExit) as ei:
        cli.main(["--version"])
    assert ei.value.code == 0
    assert "viaopc" in capsys.readouterr().out


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as ei:
        cli.main(["split", "--bogus", "x"])
    assert ei.value.code == 2


def test_missing_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as ei:
        cli.main([])
    assert ei.value.code == 2


def test_malformed_counts_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as ei:
        cli.main(["gen", "--counts", "1=two", "--out", str(tmp_path)])
    assert ei.value.code == 2


def test_bad_config_reports_json_error(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("nope: 1\n", encoding="utf-8")
    layout = tmp_path / "chip.layout"
    save_layout(Layout(bounds=Rect(0, 0, 2048, 2048)), layout)
    rc = cli.main(["split", "--config", str(bad), "--layout", str(layout),
                   "--out", str(tmp_path / "w.json")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError"
    assert "nope" in err["message"]


def test_missing_input_reports_json_error(tmp_path, capsys):
    rc = cli.main(["evaluate", "--cases", str(tmp_path), "--out",
                   str(tmp_path / "r")])
    assert rc == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "FileNotFoundError"


def test_split_matches_library(tmp_path, capsys):
    chip = Layout(bounds=Rect(0, 0, 4096, 4096),
                  vias=(Via(1, Rect(1000, 1000, 70, 70)),
                        Via(2, Rect(1100, 1000, 70, 70)),
                        Via(3, Rect(3000, 3000, 70, 70))))
    lp = tmp_path / "chip.layout"
    save_layout(chip, lp)
    out = tmp_path / "windows.json"
    rc, payload, _ = run_cli(["split", "--layout", str(lp), "--out", str(out)], capsys)
    assert rc == 0
    assert payload["windows"] == 2
    assert payload["vias"] == 3
    expect = tmp_path / "expect.json"
    save_windows(split_full_chip(chip, DbscanParams(), SplitParams()), expect)
    assert out.read_bytes() == expect.read_bytes()


def test_split_flag_overrides(tmp_path, capsys):
    chip = Layout(bounds=Rect(0, 0, 4096, 4096),
                  vias=(Via(1, Rect(1000, 1000, 70, 70)),
                        Via(2, Rect(1600, 1000, 70, 70))))
    lp = tmp_path / "chip.layout"
    save_layout(chip, lp)
    out = tmp_path / "w.json"
    # default eps 400 joins nothing at 530 nm spacing; a larger reach does
    rc, payload, _ = run_cli(["split", "--layout", str(lp), "--eps", "600",
                              "--out", str(out)], capsys)
    assert rc == 0
    assert payload["windows"] == 1


def test_optimize_clip(tmp_path, capsys):
    model_cfg = tmp_path / "model.yaml"
    model_cfg.write_text("sigmas: [12.0]\nweights: [1.0]\nsupport: 65\n", encoding="utf-8")
    ilt_cfg = tmp_path / "ilt.yaml"
    ilt_cfg.write_text("steps: 3\n", encoding="utf-8")
    clip = Layout(bounds=Rect(0, 0, 256, 256), vias=(Via(1, Rect(93, 93, 70, 70)),))
    lp = tmp_path / "clip.layout"
    save_layout(clip, lp)
    out = tmp_path / "mask.layout"
    trace = tmp_path / "trace.csv"
    args = ["optimize", "--layout", str(lp), "--model", str(model_cfg),
            "--ilt", str(ilt_cfg), "--out", str(out), "--trace", str(trace),
            "--figures"]
    rc, payload, _ = run_cli(args, capsys)
    assert rc == 0
    assert isinstance(payload["final_loss"], float)
    saved = load_layout(out)
    assert saved.mask_polys
    assert saved.bounds == clip.bounds
    assert trace.read_text(encoding="utf-8").startswith("step,loss,step_size")
    fig_dir = tmp_path / "mask_figures"
    assert (fig_dir / "trace.png").exists()
    assert (fig_dir / "mask.png").exists()
    # rerun into a second path: byte-identical mask layout
    out2 = tmp_path / "mask2.layout"
    rc2 = cli.main(["optimize", "--layout", str(lp), "--model", str(model_cfg),
                    "--ilt", str(ilt_cfg), "--out", str(out2)])
    capsys.readouterr()
    assert rc2 == 0
    assert out2.read_bytes() == out.read_bytes()


def test_optimize_rejects_odd_bounds(tmp_path, capsys):
    clip = Layout(bounds=Rect(0, 0, 255, 255), vias=(Via(1, Rect(93, 93, 70, 70)),))
    lp = tmp_path / "clip.layout"
    save_layout(clip, lp)
    rc = cli.main(["optimize", "--layout", str(lp), "--out", str(tmp_path / "m.layout")])
    capsys.readouterr()
    assert rc == 1


def test_simulate_png_and_pvband(tmp_path, capsys):
    mask = np.zeros((256, 256), dtype=np.uint8)
    mask[93:163, 93:163] = 1
    mp = tmp_path / "mask.png"
    write_grid_png(mask, mp)
    model_cfg = tmp_path / "model.yaml"
    model_cfg.write_text("sigmas: [12.0]\nweights: [1.0]\nsupport: 65\n", encoding="utf-8")
    out = tmp_path / "wafer.png"
    rc, payload, _ = run_cli(["simulate", "--mask", str(mp), "--model", str(model_cfg),
                              "--out", str(out), "--pvband", "--figures"], capsys)
    assert rc == 0
    result = simulate_corners(mask, FAST_MODEL)
    assert np.array_equal(read_grid_png(out), result.nominal)
    assert payload["printed_nm2"] == int(result.nominal.sum())
    assert payload["pvband_nm2"] == pv_band(result)
    band = read_grid_png(tmp_path / "wafer_pvband.png")
    assert int(band.sum()) == pv_band(result)
    assert (tmp_path / "wafer_figures" / "intensity.png").exists()
    assert (tmp_path / "wafer_figures" / "wafer.png").exists()


def test_simulate_bin_output(tmp_path, capsys):
    mask = np.zeros((128, 128), dtype=np.uint8)
    mask[30:100, 30:100] = 1
    mp = tmp_path / "mask.png"
    write_grid_png(mask, mp)
    model_cfg = tmp_path / "model.yaml"
    model_cfg.write_text("sigmas: [12.0]\nweights: [1.0]\nsupport: 65\n", encoding="utf-8")
    out = tmp_path / "wafer.bin"
    rc, payload, _ = run_cli(["simulate", "--mask", str(mp), "--model", str(model_cfg),
                              "--out", str(out)], capsys)
    assert rc == 0
    assert np.array_equal(read_grid_bin(out), simulate(mask, FAST_MODEL))
    assert payload["figures"] == []


def test_gen_dataset_layout(dataset):
    manifest = json.loads((dataset / "manifest.json").read_text(encoding="utf-8"))
    entries = manifest["groups"]["1"]
    assert len(entries) == 2
    for e in entries:
        case_dir = dataset / e["path"]
        for name in ("design.layout", "design.png", "design.bin", "sraf.png",
                     "mask.png", "mask.bin", "wafer.png", "wafer.bin",
                     "meta.json", "inspect.png"):
            assert (case_dir / name).exists(), name
    assert (dataset / "resolved_config.yaml").exists()
    assert (dataset / "figures" / "dataset_counts.png").exists()
    assert (dataset / "figures" / "dataset_l2.png").exists()


def test_gen_rejects_out_of_range_group(tmp_path, cfg_file, capsys):
    rc = cli.main(["gen", "--config", cfg_file, "--counts", "9=1",
                   "--out", str(tmp_path / "d")])
    capsys.readouterr()
    assert rc == 1


def test_gen_rerun_is_byte_identical(tmp_path, cfg_file, dataset):
    root2 = tmp_path / "set2"
    rc = cli.main(["gen", "--config", cfg_file, "--counts", "1=2",
                   "--seed", "3", "--out", str(root2), "--no-figures"])
    assert rc == 0
    a = _tree_bytes(dataset)
    b = _tree_bytes(root2)
    assert a == b


def test_evaluate_report(dataset, cfg_file, tmp_path, capsys):
    base = tmp_path / "rep" / "eval"
    rc, payload, _ = run_cli(["evaluate", "--config", cfg_file, "--cases",
                              str(dataset), "--out", str(base)], capsys)
    assert rc == 0
    assert payload["cases"] == 2
    assert payload["errors"] == 0
    report = json.loads(base.with_suffix(".json").read_text(encoding="utf-8"))
    manifest = json.loads((dataset / "manifest.json").read_text(encoding="utf-8"))
    metas = {e["case_id"]: e for e in manifest["groups"]["1"]}
    for row in report["rows"]:
        assert row["l2_nm2"] == metas[row["case_id"]]["l2_nm2"]
        assert row["pvband_nm2"] == metas[row["case_id"]]["pvband_nm2"]
    csv_text = base.with_suffix(".csv").read_text(encoding="utf-8")
    assert csv_text.splitlines()[0] == "kind,case_id,group,l2_nm2,pvband_nm2,miou,pixacc,error"
    fig_dir = base.parent / "eval_figures"
    assert (fig_dir / "l2_nm2_by_group.png").exists()

    # external mask directory override reproduces the same report
    masks = tmp_path / "masks"
    masks.mkdir()
    for cid, e in metas.items():
        shutil.copyfile(dataset / e["path"] / "mask.png", masks / f"{cid}.mask.png")
    base2 = tmp_path / "rep" / "eval2"
    rc2 = cli.main(["evaluate", "--config", cfg_file, "--cases", str(dataset),
                    "--masks", str(masks), "--out", str(base2), "--no-figures"])
    capsys.readouterr()
    assert rc2 == 0
    assert base2.with_suffix(".json").read_bytes() == base.with_suffix(".json").read_bytes()
    assert not (base2.parent / "eval2_figures").exists()

    # self-baseline gives unit ratios; parallel evaluation is byte-identical
    base3 = tmp_path / "rep" / "eval3"
    rc3 = cli.main(["evaluate", "--config", cfg_file, "--cases", str(dataset),
                    "--baseline", str(base.with_suffix(".json")),
                    "--jobs", "2", "--out", str(base3), "--no-figures"])
    capsys.readouterr()
    assert rc3 == 0
    report3 = json.loads(base3.with_suffix(".json").read_text(encoding="utf-8"))
    assert report3["ratios"]["overall"]["l2_nm2"] == pytest.approx(1.0)
    assert report3["rows"] == report["rows"]


def test_fullchip_rundir(tmp_path, cfg_file, capsys):
    chip = Layout(bounds=Rect(0, 0, 4096, 4096),
                  vias=(Via(1, Rect(2013, 2013, 70, 70)),))
    lp = tmp_path / "chip.layout"
    save_layout(chip, lp)
    out = tmp_path / "run"
    rc, payload, _ = run_cli(["fullchip", "--config", cfg_file, "--layout", str(lp),
                              "--out", str(out)], capsys)
    assert rc == 0
    assert payload["windows"] == 1
    assert payload["relative_gap_l2"] == 0.0
    for name in ("windows.json", "mask.layout", "report.json", "timing.json",
                 "resolved_config.yaml"):
        assert (out / name).exists(), name
    assert (out / "windows" / "w0000.mask.png").exists()
    assert (out / "windows" / "w0000.trace.csv").exists()
    assert (out / "figures" / "chip_map.png").exists()
    assert (out / "figures" / "split_vs_whole.png").exists()
    assert (out / "figures" / "w0000_trace.png").exists()
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["via_coverage"]["printed"] == 1
    assert report["engine"] == "ilt"
