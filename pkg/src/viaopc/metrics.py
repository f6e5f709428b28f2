"""Evaluation metrics (mIoU, pixel accuracy, squared L2, PV band reporting)
and batch report building.

All grids are binary; the squared L2 error between binary grids equals the
count of differing pixels and is reported in nm^2 (1 pixel = 1 nm^2).
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .litho import LithoModel, pv_band, simulate_corners
from .raster import read_grid_bin, read_grid_png

METRIC_COLUMNS = ("l2_nm2", "pvband_nm2", "miou", "pixacc")


class MetricsError(ValueError):
    pass


def _check_shapes(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricsError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    return pred.astype(bool), gt.astype(bool)


def miou(pred, gt) -> float:
    """Mean over the two classes {foreground, background} of |P&G|/|P|G|;
    a class absent in both grids contributes IoU 1."""
    p, g = _check_shapes(pred, gt)
    total = 0.0
    for cls_p, cls_g in ((p, g), (~p, ~g)):
        union = int(np.logical_or(cls_p, cls_g).sum())
        if union == 0:
            total += 1.0
        else:
            total += int(np.logical_and(cls_p, cls_g).sum()) / union
    return total / 2.0


def pix_acc(pred, gt) -> float:
    p, g = _check_shapes(pred, gt)
    return int((p == g).sum()) / p.size


def l2_error(design, wafer) -> int:
    d, w = _check_shapes(design, wafer)
    return int((d != w).sum())


@dataclass
class CaseRow:
    case_id: str
    group: int
    l2_nm2: int | None = None
    pvband_nm2: int | None = None
    miou: float | None = None
    pixacc: float | None = None
    error: str | None = None


@dataclass
class MetricsReport:
    rows: list
    group_means: dict
    overall: dict
    ratios: dict | None = None

    def to_json_dict(self) -> dict:
        return {"rows": [asdict(r) for r in self.rows],
                "groups": {str(g): m for g, m in sorted(self.group_means.items())},
                "overall": self.overall,
                "ratios": self.ratios}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("kind", "case_id", "group") + tuple(METRIC_COLUMNS) + ("error",))
        fmt = lambda v: "" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))
        for r in self.rows:
            w.writerow(("case", r.case_id, r.group) + tuple(fmt(getattr(r, c)) for c in METRIC_COLUMNS)
                       + (r.error or "",))
        for g, means in sorted(self.group_means.items()):
            w.writerow(("group_mean", "", g) + tuple(fmt(means.get(c)) for c in METRIC_COLUMNS) + ("",))
        w.writerow(("overall_mean", "", "") + tuple(fmt(self.overall.get(c)) for c in METRIC_COLUMNS) + ("",))
        if self.ratios:
            w.writerow(("ratio_vs_baseline", "", "")
                       + tuple(fmt(self.ratios.get("overall", {}).get(c)) for c in METRIC_COLUMNS) + ("",))
        return buf.getvalue()


def _mean_columns(rows) -> dict:
    out = {}
    for c in METRIC_COLUMNS:
        vals = [getattr(r, c) for r in rows if getattr(r, c) is not None]
        out[c] = float(np.mean(vals)) if vals else None
    return out


def aggregate_rows(rows, baseline: dict | None = None) -> MetricsReport:
    """Group means, overall mean, and ratio columns vs a baseline report dict."""
    groups: dict[int, list] = {}
    for r in rows:
        groups.setdefault(r.group, []).append(r)
    group_means = {g: _mean_columns(rs) for g, rs in groups.items()}
    overall = _mean_columns(rows)
    ratios = None
    if baseline is not None:
        base_overall = baseline.get("overall", {})
        ratios = {"overall": {}}
        for c in METRIC_COLUMNS:
            ours, theirs = overall.get(c), base_overall.get(c)
            ratios["overall"][c] = (ours / theirs) if ours is not None and theirs else None
        ratios["groups"] = {}
        for g, means in group_means.items():
            base_g = baseline.get("groups", {}).get(str(g), {})
            ratios["groups"][str(g)] = {
                c: (means[c] / base_g[c]) if means.get(c) is not None and base_g.get(c) else None
                for c in METRIC_COLUMNS}
    return MetricsReport(rows=sorted(rows, key=lambda r: (r.group, r.case_id)),
                         group_means=group_means, overall=overall, ratios=ratios)


def load_grid(source) -> np.ndarray:
    if isinstance(source, np.ndarray):
        return source
    s = str(source)
    if s.endswith(".bin"):
        return read_grid_bin(s)
    if s.endswith(".png"):
        return read_grid_png(s)
    raise MetricsError(f"unknown grid source: {source}")


def _eval_one(case: dict, model: LithoModel) -> CaseRow:
    row = CaseRow(case_id=str(case["case_id"]), group=int(case.get("group", 0)))
    try:
        design = load_grid(case["design"]).astype(bool)
        mask = load_grid(case["mask"])
        result = simulate_corners(mask, model)
        row.l2_nm2 = l2_error(design, result.nominal)
        row.pvband_nm2 = pv_band(result)
        ref = case.get("wafer")
        if ref is not None:
            ref = load_grid(ref)
            row.miou = miou(result.nominal, ref)
            row.pixacc = pix_acc(result.nominal, ref)
    except Exception as e:  # flagged row, batch continues
        row.error = f"{type(e).__name__}: {e}"
    return row


def _eval_star(args):
    return _eval_one(*args)


def evaluate_batch(cases, model: LithoModel, baseline: dict | None = None,
                   jobs: int = 1) -> MetricsReport:
    """Simulate each case's mask across corners and score it against its
    design (and stored wafer, when present). Case order never affects the
    report."""
    work = [(c, model) for c in cases]
    if jobs <= 1 or len(work) <= 1:
        rows = [_eval_star(a) for a in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_eval_star, work, chunksize=1))
    return aggregate_rows(rows, baseline)
