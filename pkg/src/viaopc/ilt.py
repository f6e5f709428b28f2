"""Pixel-based inverse lithography: gradient descent on a sigmoid-relaxed
mask against the forward model.

The relaxed objective is L = target_weight * sum_c u_c * sum((Z_c - T)^2)
where Z_c = sigmoid(theta_z * (I_c - threshold)) is the soft resist image at
corner c and T is the binary design target. u is 1 for the nominal corner;
when pvband_weight > 0 the remaining corners share it equally, giving an
optional corner-averaged robustness term. The gradient is the exact analytic
chain rule through the squared-convolution intensity.

The mask is parameterized as M = sigmoid(theta_m * phi), initialized from
design-union-SRAF (+1 inside, -1 outside). Updates are normalized to unit
infinity-norm and backtracked (halve on increase, max 5 halvings, keep the
incumbent when no halving helps), so the recorded loss trace is monotone
non-increasing by construction. Each line search starts from the previously
accepted step size (never above cfg.step_size), retrying growth every few
steps, which keeps the per-step cost near one objective evaluation.

Descent runs in single precision: the backtracking acceptance test compares
losses computed the same way on both sides, so the trace stays monotone, and
the public loss()/simulate() entry points keep full double precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .litho import LithoModel


@dataclass(frozen=True)
class IltConfig:
    steps: int = 400
    step_size: float = 1.0
    mask_steepness: float = 4.0
    resist_steepness: float = 50.0
    target_weight: float = 1.0
    pvband_weight: float = 0.0
    sraf_damping: float = 0.25
    min_feature: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.mask_steepness <= 0 or self.resist_steepness <= 0:
            raise ValueError("steepness values must be positive")
        if self.steps < 0 or self.step_size <= 0 or self.pvband_weight < 0:
            raise ValueError("invalid optimizer parameters")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "IltConfig":
        return cls(**d)


@dataclass
class IltResult:
    mask: np.ndarray
    trace: list = field(default_factory=list)
    final_loss: float = 0.0


def _corner_weights(model: LithoModel, cfg: IltConfig):
    """(corner, weight) pairs with zero-weight corners dropped."""
    out = [(model.corners[0], 1.0)]
    rest = model.corners[1:]
    if cfg.pvband_weight > 0 and rest:
        share = cfg.pvband_weight / len(rest)
        out.extend((c, share) for c in rest)
    return out


class _Iterate(NamedTuple):
    """One evaluated parameter point."""

    phi: np.ndarray
    mask: np.ndarray
    fields: list
    wafers: list
    loss: float


class _Objective:
    """Relaxed loss and its analytic gradient w.r.t. phi."""

    def __init__(self, target: np.ndarray, model: LithoModel, cfg: IltConfig,
                 dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.target = np.asarray(target, dtype=self.dtype)
        self.model = model
        self.cfg = cfg
        self.corners = _corner_weights(model, cfg)

    def mask_of(self, phi) -> np.ndarray:
        return expit(self.cfg.mask_steepness * phi)

    def fields_of(self, mask):
        # per active corner: the convolved fields A_k, one per kernel
        return [self.model.convolver(mask.shape, corner, self.dtype).conv_all(mask)
                for corner, _ in self.corners]

    def _soft_wafers(self, fields):
        thr = self.model.resist_threshold
        tz = self.cfg.resist_steepness
        wafers = []
        for (corner, _), aks in zip(self.corners, fields):
            intensity = self.model.weights[0] * (aks[0] * aks[0])
            for w, a in zip(self.model.weights[1:], aks[1:]):
                intensity += w * (a * a)
            intensity *= corner.dose_scale
            wafers.append(expit(tz * (intensity - thr)))
        return wafers

    def _loss_of(self, wafers) -> float:
        total = 0.0
        for (_, u), z in zip(self.corners, wafers):
            d = z - self.target
            total += u * float(np.sum(d * d, dtype=np.float64))
        return self.cfg.target_weight * total

    def evaluate(self, phi) -> _Iterate:
        mask = self.mask_of(phi)
        fields = self.fields_of(mask)
        wafers = self._soft_wafers(fields)
        return _Iterate(phi, mask, fields, wafers, self._loss_of(wafers))

    def loss_from_fields(self, fields) -> float:
        return self._loss_of(self._soft_wafers(fields))

    def grad_from_fields(self, mask, fields, wafers=None) -> np.ndarray:
        cfg = self.cfg
        tz = cfg.resist_steepness
        if wafers is None:
            wafers = self._soft_wafers(fields)
        dmask = None
        for (corner, u), aks, z in zip(self.corners, fields, wafers):
            d = z - self.target
            gi = (2.0 * cfg.target_weight * u) * d * (tz * z * (1.0 - z))
            conv = self.model.convolver(mask.shape, corner, self.dtype)
            for k, w in enumerate(self.model.weights):
                ga = gi * (corner.dose_scale * 2.0 * w) * aks[k]
                add = conv.corr(ga, k)
                dmask = add if dmask is None else dmask + add
        return dmask * (cfg.mask_steepness * mask * (1.0 - mask))

    def grad(self, it: _Iterate) -> np.ndarray:
        return self.grad_from_fields(it.mask, it.fields, it.wafers)


def loss(phi: np.ndarray, target: np.ndarray, model: LithoModel,
         cfg: IltConfig | None = None):
    """Relaxed loss value and analytic gradient w.r.t. the parameters phi."""
    cfg = cfg or IltConfig()
    obj = _Objective(target, model, cfg)
    it = obj.evaluate(np.asarray(phi, dtype=np.float64))
    return it.loss, obj.grad(it)


def initial_phi(design: np.ndarray, sraf: np.ndarray | None = None) -> np.ndarray:
    inside = np.asarray(design, dtype=bool)
    if sraf is not None:
        inside = inside | np.asarray(sraf, dtype=bool)
    return np.where(inside, 1.0, -1.0)


def binarize_mask(mask_relaxed: np.ndarray, min_feature: int = 10) -> np.ndarray:
    binary = mask_relaxed >= 0.5
    if min_feature > 1 and binary.any():
        binary = ndimage.binary_opening(binary, structure=np.ones((min_feature, min_feature), bool))
    return binary.astype(np.uint8)


def optimize_mask(design: np.ndarray, sraf: np.ndarray | None, model: LithoModel,
                  cfg: IltConfig | None = None) -> IltResult:
    """Descend the relaxed objective from the design-union-SRAF start and
    return the binarized mask plus the (monotone) loss trace."""
    cfg = cfg or IltConfig()
    design = np.asarray(design, dtype=np.float64)
    if design.sum() == 0 and (sraf is None or np.asarray(sraf).sum() == 0):
        return IltResult(mask=np.zeros(design.shape, dtype=np.uint8))

    sraf_arr = None if sraf is None else np.asarray(sraf, dtype=bool)
    obj = _Objective(design, model, cfg, dtype=np.float32)
    phi = initial_phi(design, sraf_arr).astype(obj.dtype)
    damp = np.ones_like(phi)
    if sraf_arr is not None and cfg.sraf_damping != 1.0:
        damp[sraf_arr & ~design.astype(bool)] = cfg.sraf_damping

    cur = obj.evaluate(phi)
    trace = [(0, cur.loss, 0.0)]
    stalls = 0
    s_accept = cfg.step_size
    for step in range(1, cfg.steps + 1):
        g = obj.grad(cur) * damp
        gmax = float(np.max(np.abs(g)))
        if gmax == 0.0:
            break
        g /= gmax
        # Start from the last working step size; probe growth periodically.
        s = min(cfg.step_size, 2.0 * s_accept) if step % 8 == 1 else s_accept
        accepted = False
        for _ in range(6):  # initial try + up to 5 halvings
            cand = obj.evaluate(cur.phi - s * g)
            if cand.loss <= cur.loss:
                cur = cand
                accepted = True
                break
            s *= 0.5
        trace.append((step, cur.loss, s if accepted else 0.0))
        if accepted:
            s_accept = s
            stalls = 0
        else:
            stalls += 1
            if stalls >= 3:
                break  # converged: no usable descent direction remains
    final = binarize_mask(obj.mask_of(cur.phi), cfg.min_feature)
    return IltResult(mask=final, trace=trace, final_loss=cur.loss)


def save_trace(trace, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss,step_size\n")
        for step, value, s in trace:
            f.write(f"{step},{value:.9e},{s:.9g}\n")
