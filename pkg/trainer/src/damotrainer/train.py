"""Training loops, checkpointing, and mask emission.

Two stages:

- ``train_dls`` — the learned litho simulator (mask image -> wafer image),
  trained adversarially with a perceptual term, Adam (lr 2e-4, betas
  (0.5, 0.999)).
- ``train_damo`` — the mask generator (design image -> mask image), trained
  jointly *through* the frozen litho simulator.  Per the joint training
  rule, per-sample generator/discriminator gradients are accumulated and
  applied as ``W -= (lr / batch) * sum_i grad_i`` — implemented as plain
  gradient steps on the mean-reduced losses, which is the identical update.
  The simulator's generator parameters are frozen and must come out of the
  run bit-identical.

Noise inputs are single uniform channels; evaluation and mask emission use
the constant mid-noise 0.5 so results are deterministic and independent of
iteration order.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from itertools import chain
from pathlib import Path

import numpy as np
import torch

from .data import CaseSet, find_cases, read_grid, write_mask_png
from .features import make_phi
from .losses import LossWeights, log_d, loss_damo, loss_dls, perceptual
from .models import build_models


@dataclass(frozen=True)
class TrainConfig:
    resolution: int = 64
    width_factor: float = 0.25
    batch_size: int = 4
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    max_epochs: int = 100
    seed: int = 0
    crop: int = 1280  # central crop of the source grids, pooled to `resolution`
    phi_kind: str = "auto"  # perceptual feature extractor (see make_phi)

    @property
    def betas(self) -> tuple[float, float]:
        return self.beta1, self.beta2

    def default_steps(self, n_cases: int) -> int:
        per_epoch = max(1, -(-n_cases // self.batch_size))
        return self.max_epochs * per_epoch


def binary_miou(pred: np.ndarray, target: np.ndarray) -> float:
    """Two-class (foreground/background) mean IoU; an absent class scores 1."""
    pred = np.asarray(pred, dtype=bool)
    target = np.asarray(target, dtype=bool)
    ious = []
    for cls in (True, False):
        p = pred == cls
        t = target == cls
        union = np.logical_or(p, t).sum()
        inter = np.logical_and(p, t).sum()
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


def _mid_noise(n: int, size: int) -> torch.Tensor:
    return torch.full((n, 1, size, size), 0.5)


def save_checkpoint(path, kind: str, models: dict, cfg: TrainConfig) -> None:
    payload = {
        "kind": kind,
        "config": asdict(cfg),
        "models": {name: m.state_dict() for name, m in models.items()},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[dict, TrainConfig, str]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    cfg = TrainConfig(**payload["config"])
    models = build_models(cfg.resolution, cfg.width_factor, seed=cfg.seed)
    for name, state in payload["models"].items():
        models[name].load_state_dict(state)
    return models, cfg, payload["kind"]


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


class DlsTrainer:
    """Adversarial trainer for the litho-simulator stage."""

    def __init__(self, models: dict, phi, cfg: TrainConfig,
                 lambda0: float = LossWeights().lambda0) -> None:
        self.models = models
        self.phi = phi
        self.cfg = cfg
        self.lambda0 = lambda0
        self.opt_g = torch.optim.Adam(models["g_dls"].parameters(),
                                      lr=cfg.lr, betas=cfg.betas)
        self.opt_d = torch.optim.Adam(
            chain(models["d_dls1"].parameters(), models["d_dls2"].parameters()),
            lr=cfg.lr, betas=cfg.betas)
        self.noise_gen = torch.Generator().manual_seed(cfg.seed)
        self.step_count = 0

    def step(self, batch: dict) -> dict:
        x, y = batch["x"], batch["y"]
        z = torch.rand((x.shape[0], 1, x.shape[-1], x.shape[-1]),
                       generator=self.noise_gen)
        comp = loss_dls(self.models, self.phi,
                        {"x": x, "y": y, "z": z}, self.lambda0)
        self.opt_d.zero_grad()
        comp["d_total"].backward()
        self.opt_d.step()
        # fresh discriminator forwards for the generator step so the
        # generator sees the just-updated critics
        d1, d2 = self.models["d_dls1"], self.models["d_dls2"]
        g_adv = -(log_d(d1(x, comp["y_hat"])) + log_d(d2(x, comp["y_hat"])))
        g_loss = g_adv + self.lambda0 * comp["perceptual"]
        self.opt_g.zero_grad()
        g_loss.backward()
        self.opt_g.step()
        self.step_count += 1
        return {"step": self.step_count,
                "g_total": float(g_loss.detach()),
                "g_adv": float(g_adv.detach()),
                "perceptual": float(comp["perceptual"].detach()),
                "d_total": float(comp["d_total"].detach())}

    def run(self, cases: CaseSet, steps: int) -> list[dict]:
        gen = torch.Generator().manual_seed(self.cfg.seed + 1 + self.step_count)
        history = []
        for m in self.models.values():
            m.train()
        for _ in range(steps):
            batch = cases.sample(self.cfg.batch_size, gen)
            history.append(self.step(batch))
        return history

    def predict_wafers(self, cases: CaseSet) -> torch.Tensor:
        """Deterministic (mid-noise) wafer predictions for every case."""
        g = self.models["g_dls"]
        g.eval()
        with torch.no_grad():
            z = _mid_noise(len(cases), cases.resolution)
            out = g(torch.cat([cases.mask_img, z], dim=1))
        g.train()
        return out

    def eval_miou(self, cases: CaseSet, threshold: float = 0.5) -> float:
        pred = self.predict_wafers(cases)[:, 2].numpy() >= threshold
        target = cases.wafer_img[:, 2].numpy() >= threshold
        return float(np.mean([binary_miou(p, t) for p, t in zip(pred, target)]))


class DamoTrainer:
    """Joint trainer for the mask-generator stage over a frozen simulator.

    Updates follow the accumulate rule ``W -= (lr / b) * sum_i grad_i``:
    the losses are batch means, so a single gradient of the mean scaled by
    ``lr`` applies exactly that update.  Gradients are taken with
    ``autograd.grad`` so generator and discriminator updates cannot
    contaminate each other.
    """

    def __init__(self, models: dict, phi, cfg: TrainConfig,
                 weights: LossWeights = LossWeights()) -> None:
        self.models = models
        self.phi = phi
        self.cfg = cfg
        self.weights = weights
        models["g_dls"].requires_grad_(False)
        self.g_params = list(models["g_dmg"].parameters())
        self.d_params = list(chain(
            models["d_dmg1"].parameters(), models["d_dmg2"].parameters(),
            models["d_dls1"].parameters(), models["d_dls2"].parameters()))
        self.noise_gen = torch.Generator().manual_seed(cfg.seed)
        self.step_count = 0

    def step(self, batch: dict, z0: torch.Tensor | None = None,
             z: torch.Tensor | None = None) -> dict:
        n, size = batch["w"].shape[0], batch["w"].shape[-1]
        if z0 is None:
            z0 = torch.rand((n, 1, size, size), generator=self.noise_gen)
        if z is None:
            z = torch.rand((n, 1, size, size), generator=self.noise_gen)
        comp = loss_damo(self.models, self.phi,
                         {**batch, "z0": z0, "z": z}, self.weights)
        g_grads = torch.autograd.grad(comp["g_total"], self.g_params,
                                      retain_graph=True, allow_unused=True)
        d_grads = torch.autograd.grad(comp["d_total"], self.d_params,
                                      allow_unused=True)
        with torch.no_grad():
            for p, g in zip(self.g_params, g_grads):
                if g is not None:
                    p -= self.cfg.lr * g
            for p, g in zip(self.d_params, d_grads):
                if g is not None:
                    p -= self.cfg.lr * g
        self.step_count += 1
        return {"step": self.step_count,
                **{k: float(comp[k].detach())
                   for k in ("g_total", "dmg_adv", "dmg_perc", "dls_adv",
                             "dls_perc", "e_l1", "d_total")}}

    def run(self, cases: CaseSet, steps: int) -> list[dict]:
        gen = torch.Generator().manual_seed(self.cfg.seed + 1 + self.step_count)
        history = []
        for name, m in self.models.items():
            m.train()
        self.models["g_dls"].eval()  # frozen simulator: fixed normalization
        for _ in range(steps):
            batch = cases.sample(self.cfg.batch_size, gen)
            history.append(self.step(batch))
        return history

    def predict_masks(self, cases: CaseSet) -> torch.Tensor:
        g = self.models["g_dmg"]
        g.eval()
        with torch.no_grad():
            z0 = _mid_noise(len(cases), cases.resolution)
            out = g(torch.cat([cases.design_img, z0], dim=1))
        g.train()
        return out


_DLS_COLS = ["step", "g_total", "g_adv", "perceptual", "d_total"]
_DAMO_COLS = ["step", "g_total", "dmg_adv", "dmg_perc", "dls_adv",
              "dls_perc", "e_l1", "d_total"]


def train_dls(data_root, out_dir, cfg: TrainConfig = TrainConfig(),
              steps: int | None = None, lambda0: float = LossWeights().lambda0,
              eval_every: int = 100, target_miou: float | None = None) -> dict:
    """Train the litho simulator on a dataset; write checkpoint + loss CSV.

    Stops early once ``target_miou`` (evaluated on the training cases with
    deterministic noise every ``eval_every`` steps) is reached, if given.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cases = CaseSet(find_cases(data_root), cfg.resolution, cfg.crop)
    total = steps if steps is not None else cfg.default_steps(len(cases))
    models = build_models(cfg.resolution, cfg.width_factor, seed=cfg.seed)
    phi = make_phi(cfg.phi_kind, seed=cfg.seed)
    trainer = DlsTrainer(models, phi, cfg, lambda0)
    history: list[dict] = []
    miou = None
    while trainer.step_count < total:
        chunk = min(eval_every, total - trainer.step_count) if eval_every else total
        history.extend(trainer.run(cases, chunk))
        if target_miou is not None:
            miou = trainer.eval_miou(cases)
            if miou > target_miou:
                break
    if miou is None:
        miou = trainer.eval_miou(cases)
    _write_csv(out_dir / "dls_loss.csv", _DLS_COLS,
               [[r[c] for c in _DLS_COLS] for r in history])
    ckpt = out_dir / "dls_checkpoint.pt"
    save_checkpoint(ckpt, "dls", models, cfg)
    return {"kind": "dls", "steps": trainer.step_count, "cases": len(cases),
            "miou": miou, "checkpoint": str(ckpt),
            "loss_csv": str(out_dir / "dls_loss.csv"),
            "final": history[-1] if history else None}


def train_damo(data_root, dls_checkpoint, out_dir,
               cfg: TrainConfig | None = None,
               weights: LossWeights = LossWeights(),
               steps: int | None = None) -> dict:
    """Train the mask generator through the frozen simulator checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dls_models, dls_cfg, kind = load_checkpoint(dls_checkpoint)
    if kind != "dls":
        raise ValueError(f"expected a dls checkpoint, got {kind!r}")
    cfg = cfg if cfg is not None else dls_cfg
    if cfg.resolution != dls_cfg.resolution:
        raise ValueError("mask-generator resolution must match the simulator's")
    cases = CaseSet(find_cases(data_root), cfg.resolution, cfg.crop)
    total = steps if steps is not None else cfg.default_steps(len(cases))
    models = build_models(cfg.resolution, cfg.width_factor, seed=cfg.seed + 1)
    models["g_dls"] = dls_models["g_dls"]
    phi = make_phi(cfg.phi_kind, seed=cfg.seed)
    trainer = DamoTrainer(models, phi, cfg, weights)
    history = trainer.run(cases, total)
    _write_csv(out_dir / "damo_loss.csv", _DAMO_COLS,
               [[r[c] for c in _DAMO_COLS] for r in history])
    ckpt = out_dir / "damo_checkpoint.pt"
    save_checkpoint(ckpt, "damo", models, cfg)
    return {"kind": "damo", "steps": trainer.step_count, "cases": len(cases),
            "checkpoint": str(ckpt),
            "loss_csv": str(out_dir / "damo_loss.csv"),
            "final": history[-1] if history else None}


def emit_masks(checkpoint, data_root, out_dir, threshold: float = 0.5) -> list[str]:
    """Generate a mask PNG per case, named ``<case-id>.mask.png``.

    The generated mask (the mask channel of the generator output, mid-noise,
    thresholded) is nearest-upsampled back to source resolution and placed in
    the training crop's position of an otherwise empty grid of the case's
    original size.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    models, cfg, kind = load_checkpoint(checkpoint)
    if kind != "damo":
        raise ValueError(f"expected a damo checkpoint, got {kind!r}")
    g = models["g_dmg"]
    g.eval()
    cases = find_cases(data_root)
    case_set = CaseSet(cases, cfg.resolution, cfg.crop)
    with torch.no_grad():
        z0 = _mid_noise(len(case_set), cfg.resolution)
        pred = g(torch.cat([case_set.design_img, z0], dim=1))[:, 2].numpy()
    written = []
    for case, mask_small in zip(cases, pred):
        full = read_grid(case.grids["design"])
        h, w = full.shape
        crop = min(cfg.crop, h, w)
        factor = crop // cfg.resolution
        up = np.repeat(np.repeat(mask_small >= threshold, factor, axis=0),
                       factor, axis=1).astype(np.uint8)
        grid = np.zeros((h, w), dtype=np.uint8)
        y0, x0 = (h - crop) // 2, (w - crop) // 2
        grid[y0:y0 + crop, x0:x0 + crop] = up[:crop, :crop]
        path = out_dir / f"{case.case_id}.mask.png"
        write_mask_png(grid, path)
        written.append(str(path))
    return written
