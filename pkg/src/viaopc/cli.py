"""Unified command-line interface.

Subcommands: gen (dataset factory), split (window splitting), optimize
(reference OPC on one clip), simulate (forward lithography), evaluate
(batch metrics report), fullchip (end-to-end chip flow).

Every command resolves its configuration from defaults, then --config, then
any section file (--rules/--model/--ilt), then explicit flags, and logs the
fully resolved configuration to stderr. Primary outputs are deterministic;
wall-clock only ever lands in timing.json. Commands print one JSON summary
line to stdout; failures print a JSON error to stderr and exit 1 (usage
errors exit 2)."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config, load_section
from .datagen import build_dataset
from .ilt import optimize_mask, save_trace
from .layout import load_layout, save_layout
from .litho import pv_band, simulate, simulate_corners
from .metrics import evaluate_batch, load_grid
from .raster import (
    center_crop_grid,
    extract_polygons,
    rasterize,
    recover_grid,
    write_grid_bin,
    write_grid_png,
)
from .splitter import DbscanParams, SplitParams, save_windows, split_full_chip

log = logging.getLogger("viaopc")


def _counts_spec(text: str) -> dict[int, int]:
    """Parse per-group counts like '1=2500,2=2500'."""
    out: dict[int, int] = {}
    for part in text.split(","):
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"bad counts entry {part!r}, expected G=N")
        g, n = part.split("=", 1)
        try:
            group, count = int(g), int(n)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad counts entry {part!r}, expected integers")
        if group < 1 or count < 0:
            raise argparse.ArgumentTypeError(f"bad counts entry {part!r}")
        out[group] = count
    if not out:
        raise argparse.ArgumentTypeError("empty counts spec")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="viaopc",
        description="Via-layer OPC pipeline: data generation, window splitting, "
                    "mask optimization, lithography simulation, and evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="pipeline configuration file (YAML)")
    common.add_argument("--jobs", type=int, default=1, metavar="N",
                        help="worker processes for parallel stages (default 1)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen", parents=[common], help="generate a paired synthetic dataset")
    p.add_argument("--rules", metavar="CFG", help="generation rules section file")
    p.add_argument("--model", metavar="CFG", help="lithography model section file")
    p.add_argument("--ilt", metavar="CFG", help="optimizer section file")
    p.add_argument("--counts", type=_counts_spec, required=True, metavar="SPEC",
                   help="cases per group, e.g. 1=2500,2=2500,...,6=2500")
    p.add_argument("--seed", type=int, metavar="N", help="master seed (default from config)")
    p.add_argument("--out", required=True, metavar="DIR", help="dataset root directory")
    p.add_argument("--no-figures", action="store_true", help="skip summary figures")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("split", parents=[common], help="split a chip into windows")
    p.add_argument("--layout", required=True, metavar="PATH")
    p.add_argument("--eps", type=float, metavar="NM", help="clustering reach (default 400)")
    p.add_argument("--max-via", type=int, dest="max_via", metavar="K",
                   help="max vias per window (default 5)")
    p.add_argument("--window", type=int, metavar="NM", help="window size (default 1024)")
    p.add_argument("--seed", type=int, metavar="N", help="splitting seed")
    p.add_argument("--out", required=True, metavar="PATH", help="windows JSON output")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("optimize", parents=[common], help="reference OPC on one clip layout")
    p.add_argument("--layout", required=True, metavar="PATH", help="clip layout (design+sraf)")
    p.add_argument("--model", metavar="CFG")
    p.add_argument("--ilt", metavar="CFG")
    p.add_argument("--out", required=True, metavar="PATH", help="mask layout output")
    p.add_argument("--trace", metavar="PATH", help="write the loss trace CSV here")
    p.add_argument("--figures", action="store_true", help="also render figures")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("simulate", parents=[common], help="forward lithography on a mask image")
    p.add_argument("--mask", required=True, metavar="IMG", help="mask grid (.png or .bin)")
    p.add_argument("--model", metavar="CFG")
    p.add_argument("--out", required=True, metavar="IMG", help="wafer image output")
    p.add_argument("--pvband", action="store_true",
                   help="simulate all corners and emit the variability band")
    p.add_argument("--figures", action="store_true", help="also render figures")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="batch metrics over case directories")
    p.add_argument("--cases", required=True, metavar="DIR", help="dataset root")
    p.add_argument("--model", metavar="CFG")
    p.add_argument("--masks", metavar="DIR",
                   help="override mask source: <DIR>/<case-id>.mask.png")
    p.add_argument("--baseline", metavar="JSON", help="baseline report for ratio rows")
    p.add_argument("--out", required=True, metavar="BASE",
                   help="report base path; writes BASE.csv and BASE.json")
    p.add_argument("--no-figures", action="store_true", help="skip report figures")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fullchip", parents=[common], help="end-to-end full-chip flow")
    p.add_argument("--layout", required=True, metavar="PATH", help="chip layout")
    p.add_argument("--engine", default="ilt", metavar="ENGINE",
                   help="'ilt' or 'masks:<dir>' (default ilt)")
    p.add_argument("--model", metavar="CFG")
    p.add_argument("--ilt", metavar="CFG", dest="ilt")
    p.add_argument("--eps", type=float, metavar="NM")
    p.add_argument("--max-via", type=int, dest="max_via", metavar="K")
    p.add_argument("--window", type=int, metavar="NM")
    p.add_argument("--seed", type=int, metavar="N")
    p.add_argument("--out", required=True, metavar="DIR", help="run directory")
    p.add_argument("--no-figures", action="store_true", help="skip run figures")
    p.set_defaults(func=cmd_fullchip)
    return parser


def _resolve(args) -> PipelineConfig:
    overrides: dict = {}
    for flag, section in (("rules", "rules"), ("model", "litho"), ("ilt", "ilt")):
        path = getattr(args, flag, None)
        if path:
            overrides[section] = load_section(path, section)
    cfg = load_config(getattr(args, "config", None), overrides)
    log.info("resolved configuration:\n%s", cfg.to_yaml())
    return cfg


def _split_params(args, cfg: PipelineConfig) -> tuple[DbscanParams, SplitParams]:
    eps = args.eps if getattr(args, "eps", None) is not None else cfg.dbscan.eps
    return (DbscanParams(eps=eps),
            SplitParams(
                max_vias=args.max_via if getattr(args, "max_via", None) is not None
                else cfg.split.max_vias,
                window=args.window if getattr(args, "window", None) is not None
                else cfg.split.window,
                kmeans_iters=cfg.split.kmeans_iters,
                seed=args.seed if getattr(args, "seed", None) is not None
                else cfg.split.seed))


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def cmd_gen(args) -> int:
    cfg = _resolve(args)
    bad = [g for g in args.counts
           if not cfg.rules.via_count_min <= g <= cfg.rules.via_count_max]
    if bad:
        raise ValueError(f"groups {bad} outside the via-count range "
                         f"[{cfg.rules.via_count_min}, {cfg.rules.via_count_max}]")
    seed = args.seed if args.seed is not None else cfg.seed
    root = Path(args.out)
    manifest = build_dataset(args.counts, cfg.rules, cfg.litho, cfg.ilt, root,
                             seed=seed, jobs=args.jobs)
    (root / "resolved_config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    figures = []
    if not args.no_figures:
        from . import plots
        figures = [str(p) for p in plots.dataset_summary(manifest, root / cfg.paths["figures"])]
    n_cases = sum(len(v) for v in manifest["groups"].values())
    _emit({"command": "gen", "out": str(root), "cases": n_cases,
           "failures": len(manifest["failures"]), "figures": figures})
    return 0


def cmd_split(args) -> int:
    cfg = _resolve(args)
    d, s = _split_params(args, cfg)
    layout = load_layout(args.layout)
    ws = split_full_chip(layout, d, s)
    save_windows(ws, args.out)
    _emit({"command": "split", "out": args.out, "windows": len(ws.windows),
           "vias": ws.via_count})
    return 0


def cmd_optimize(args) -> int:
    cfg = _resolve(args)
    layout = load_layout(args.layout)
    b = layout.bounds
    if b.w != b.h or b.w % 2:
        raise ValueError(f"clip bounds must be a square of even size, got {b.w}x{b.h}")
    img = rasterize(layout, (b.x + b.w // 2, b.y + b.h // 2), b.w)
    design, sraf = img["design"], img["sraf"]
    wsize = min(cfg.split.window, b.w)
    result = optimize_mask(center_crop_grid(design, wsize),
                           center_crop_grid(sraf, wsize), cfg.litho, cfg.ilt)
    base = ((design > 0) | (sraf > 0)).astype(np.uint8)
    mask = recover_grid(result.mask, base)
    polys = [tuple((x + b.x, y + b.y) for x, y in ring) for ring in extract_polygons(mask)]
    save_layout(layout.replace(mask_polys=polys), args.out)
    if args.trace:
        save_trace(result.trace, args.trace)
    figures = []
    if args.figures:
        from . import plots
        out = Path(args.out)
        fig_dir = out.parent / (out.stem + "_figures")
        figures = [str(plots.plot_trace(result.trace, fig_dir / "trace.png")),
                   str(plots.plot_grid(mask, fig_dir / "mask.png", "optimized mask"))]
    _emit({"command": "optimize", "out": args.out,
           "final_loss": result.final_loss, "steps": max(len(result.trace) - 1, 0),
           "trace": args.trace, "figures": figures})
    return 0


def _write_wafer(grid, path: Path) -> None:
    if path.suffix == ".bin":
        write_grid_bin(grid, path)
    else:
        write_grid_png(grid, path)


def cmd_simulate(args) -> int:
    cfg = _resolve(args)
    mask = load_grid(args.mask)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    payload = {"command": "simulate", "out": str(out)}
    if args.pvband:
        result = simulate_corners(mask, cfg.litho)
        wafer = result.nominal
        union = np.zeros(wafer.shape, dtype=bool)
        inter = np.ones(wafer.shape, dtype=bool)
        for g in result.grids:
            union |= g.astype(bool)
            inter &= g.astype(bool)
        band = (union & ~inter).astype(np.uint8)
        band_path = out.with_name(out.stem + "_pvband" + (out.suffix or ".png"))
        _write_wafer(band, band_path)
        payload["pvband_nm2"] = pv_band(result)
        payload["pvband_out"] = str(band_path)
    else:
        wafer = simulate(mask, cfg.litho)
    _write_wafer(wafer, out)
    payload["printed_nm2"] = int(wafer.sum())
    figures = []
    if args.figures:
        from . import plots
        fig_dir = out.parent / (out.stem + "_figures")
        intensity = cfg.litho.intensity(mask)
        figures = [str(plots.plot_intensity(intensity, cfg.litho.resist_threshold,
                                            fig_dir / "intensity.png")),
                   str(plots.plot_grid(wafer, fig_dir / "wafer.png", "printed wafer"))]
    payload["figures"] = figures
    _emit(payload)
    return 0


def _discover_cases(root: Path, masks_dir: Path | None) -> list[dict]:
    metas = sorted(root.rglob("meta.json"))
    cases = []
    for mp in metas:
        d = mp.parent
        try:
            meta = json.loads(mp.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            meta = {}
        case_id = str(meta.get("case_id", d.name))
        group = int(meta.get("group", meta.get("via_count", 0)) or 0)

        def pick(role, d=d):
            for ext in (".bin", ".png"):
                p = d / f"{role}{ext}"
                if p.exists():
                    return str(p)
            return None

        mask = str(masks_dir / f"{case_id}.mask.png") if masks_dir else pick("mask")
        cases.append({"case_id": case_id, "group": group, "design": pick("design"),
                      "mask": mask, "wafer": pick("wafer")})
    if not cases:
        raise FileNotFoundError(f"no cases (meta.json) found under {root}")
    cases.sort(key=lambda c: (c["group"], c["case_id"]))
    return cases


def cmd_evaluate(args) -> int:
    cfg = _resolve(args)
    cases = _discover_cases(Path(args.cases),
                            Path(args.masks) if args.masks else None)
    baseline = None
    if args.baseline:
        with open(args.baseline, "r", encoding="utf-8") as f:
            baseline = json.load(f)
    report = evaluate_batch(cases, cfg.litho, baseline=baseline, jobs=args.jobs)
    base = Path(args.out)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    json_path = base.with_suffix(".json")
    csv_path = base.with_suffix(".csv")
    json_path.write_text(report.to_json(), encoding="utf-8")
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    figures = []
    if not args.no_figures:
        from . import plots
        figures = [str(p) for p in
                   plots.evaluate_figures(report, base.parent / (base.name + "_figures"))]
    errors = sum(1 for r in report.rows if r.error)
    _emit({"command": "evaluate", "cases": len(report.rows), "errors": errors,
           "out_json": str(json_path), "out_csv": str(csv_path), "figures": figures})
    return 0


def cmd_fullchip(args) -> int:
    from .fullchip import run_full_chip

    cfg = _resolve(args)
    d, s = _split_params(args, cfg)
    layout = load_layout(args.layout)
    out = Path(args.out)
    run = run_full_chip(layout, cfg.litho, dbscan=d, split=s, ilt_cfg=cfg.ilt,
                        engine=args.engine, out_dir=out, jobs=args.jobs)
    (out / "resolved_config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    figures = []
    if not args.no_figures:
        from . import plots
        fig_dir = out / cfg.paths["figures"]
        figures = [str(plots.chip_map(layout, run.window_set, fig_dir / "chip_map.png")),
                   str(plots.split_vs_whole(run.report, fig_dir / "split_vs_whole.png"))]
        for r in run.results:
            if r.trace:
                figures.append(str(plots.plot_trace(
                    r.trace, fig_dir / f"w{r.index:04d}_trace.png")))
                break
    _emit({"command": "fullchip", "out": str(out),
           "windows": run.report["windows"],
           "whole_l2_nm2": run.report["whole_chip"]["l2_nm2"],
           "window_sum_l2_nm2": run.report["window_sum"]["l2_nm2"],
           "relative_gap_l2": run.report["relative_gap"]["l2"],
           "figures": figures})
    return 0


def main(argv=None) -> int:
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
        log.propagate = False
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
