"""Inverse-litho optimizer tests.

The gradient oracle is central finite differences on the relaxed loss,
evaluated coordinate-by-coordinate with plain Python loops, so any error in
the analytic chain rule shows up as a relative-error blowup.
"""
import csv

import numpy as np
import pytest

from viaopc.ilt import (
    IltConfig,
    _corner_weights,
    binarize_mask,
    initial_phi,
    loss,
    optimize_mask,
    save_trace,
)
from viaopc.litho import DEFAULT_CORNERS, LithoModel, simulate
from viaopc.metrics import l2_error


def small_model(rng):
    sigmas = tuple(float(s) for s in rng.uniform(1.5, 4.0, size=2))
    w = rng.uniform(0.2, 1.0, size=2)
    return LithoModel(
        sigmas=sigmas,
        weights=tuple(float(x) for x in (w / w.sum())),
        support=15,
        resist_threshold=float(rng.uniform(0.2, 0.4)),
    )


def fd_gradient(phi, target, model, cfg, eps=1e-4):
    g = np.zeros_like(phi)
    it = np.nditer(phi, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        p = phi.copy()
        p[idx] += eps
        hi, _ = loss(p, target, model, cfg)
        p[idx] -= 2 * eps
        lo, _ = loss(p, target, model, cfg)
        g[idx] = (hi - lo) / (2 * eps)
    return g


@pytest.mark.parametrize("case", range(6))
def test_gradient_matches_central_differences(case):
    rng = np.random.default_rng(1000 + case)
    model = small_model(rng)
    cfg = IltConfig(
        mask_steepness=float(rng.uniform(2.0, 6.0)),
        resist_steepness=float(rng.uniform(5.0, 30.0)),
        pvband_weight=float(rng.uniform(0.0, 1.0)) if case % 2 else 0.0,
    )
    phi = rng.uniform(-2.0, 2.0, size=(16, 16))
    target = (rng.random((16, 16)) < 0.4).astype(np.float64)
    _, analytic = loss(phi, target, model, cfg)
    numeric = fd_gradient(phi, target, model, cfg)
    rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
    assert rel < 1e-4, f"gradient relative error {rel:.3e}"


def test_corner_weights_nominal_only_by_default():
    model = LithoModel()
    pairs = _corner_weights(model, IltConfig())
    assert len(pairs) == 1 and pairs[0][0] is model.corners[0] and pairs[0][1] == 1.0


def test_corner_weights_share_pvband_weight():
    model = LithoModel()
    pairs = _corner_weights(model, IltConfig(pvband_weight=0.5))
    assert len(pairs) == len(DEFAULT_CORNERS)
    assert pairs[0][1] == 1.0
    for _, u in pairs[1:]:
        assert u == pytest.approx(0.5 / (len(DEFAULT_CORNERS) - 1))


def test_config_validation():
    with pytest.raises(ValueError):
        IltConfig(mask_steepness=0)
    with pytest.raises(ValueError):
        IltConfig(step_size=0)
    with pytest.raises(ValueError):
        IltConfig(pvband_weight=-0.1)
    cfg = IltConfig(steps=7, resist_steepness=12.5)
    assert IltConfig.from_dict(cfg.to_dict()) == cfg


def test_initial_phi_levels():
    design = np.zeros((8, 8))
    design[2:4, 2:4] = 1
    sraf = np.zeros((8, 8))
    sraf[6:8, 0:2] = 1
    phi = initial_phi(design, sraf)
    assert phi[2, 2] == 1.0 and phi[6, 0] == 1.0 and phi[0, 0] == -1.0


def test_binarize_removes_small_specks_keeps_blocks():
    relaxed = np.zeros((64, 64))
    relaxed[10:40, 10:40] = 0.9   # large block survives opening
    relaxed[50:53, 50:53] = 0.9   # 3x3 speck is erased by a 10x10 opening
    out = binarize_mask(relaxed, min_feature=10)
    assert out.dtype == np.uint8
    assert out[20, 20] == 1 and out[51, 51] == 0
    # threshold at 0.5, no opening when min_feature == 1
    assert binarize_mask(np.full((4, 4), 0.49), min_feature=1).sum() == 0
    assert binarize_mask(np.full((4, 4), 0.51), min_feature=1).sum() == 16


def _via_clip(n=256, via=70):
    design = np.zeros((n, n))
    lo = (n - via) // 2
    design[lo:lo + via, lo:lo + via] = 1
    return design


def test_trace_is_monotone_and_improves():
    design = _via_clip()
    model = LithoModel()
    res = optimize_mask(design, None, model, IltConfig(steps=15))
    losses = [v for _, v, _ in res.trace]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert losses[-1] < losses[0]
    assert res.trace[0][0] == 0 and res.trace[-1][0] <= 15
    assert res.final_loss == pytest.approx(losses[-1])


def test_optimized_mask_beats_design_as_mask():
    design = _via_clip()
    model = LithoModel()
    base_wafer = simulate(design, model)
    base_l2 = l2_error(base_wafer, design)
    res = optimize_mask(design, None, model, IltConfig(steps=40))
    opt_wafer = simulate(res.mask.astype(np.float64), model)
    opt_l2 = l2_error(opt_wafer, design)
    assert opt_l2 < base_l2


def test_empty_design_short_circuits():
    res = optimize_mask(np.zeros((64, 64)), None, LithoModel(), IltConfig(steps=5))
    assert res.mask.sum() == 0 and res.trace == [] and res.final_loss == 0.0


def test_sraf_damping_zero_freezes_assist_pixels():
    n = 256
    design = _via_clip(n)
    sraf = np.zeros((n, n))
    sraf[20:50, 60:150] = 1  # 30x90 assist bar away from the via
    cfg = IltConfig(steps=3, sraf_damping=0.0)
    res = optimize_mask(design, sraf, LithoModel(), cfg)
    assert res.mask[sraf.astype(bool)].all()


def test_optimize_is_deterministic():
    design = _via_clip(128)
    model = LithoModel(support=65)
    cfg = IltConfig(steps=8)
    a = optimize_mask(design, None, model, cfg)
    b = optimize_mask(design, None, model, cfg)
    assert np.array_equal(a.mask, b.mask)
    assert a.trace == b.trace


def test_save_trace_roundtrip(tmp_path):
    trace = [(0, 12.5, 0.0), (1, 10.25, 1.0), (2, 10.25, 0.0)]
    path = tmp_path / "trace.csv"
    save_trace(trace, path)
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [int(r["step"]) for r in rows] == [0, 1, 2]
    assert [float(r["loss"]) for r in rows] == [12.5, 10.25, 10.25]
    assert [float(r["step_size"]) for r in rows] == [0.0, 1.0, 0.0]
