"""Forward lithography model: aerial image by weighted squared convolutions,
constant-threshold resist, process corners, and PV band geometry.

intensity(mask) = dose * sum_k w_k * (mask (*) h_k)^2, with every kernel
normalized to unit sum and the weights normalized to unit sum, so a full-field
mask yields intensity exactly 1. A process corner scales every kernel sigma by
its defocus factor and the intensity by its dose factor.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

DEFAULT_SIGMA = 25.0
DEFAULT_SUPPORT = 129
DEFAULT_THRESHOLD = 0.225


class LithoError(ValueError):
    pass


@dataclass(frozen=True)
class ProcessCorner:
    name: str
    defocus_scale: float = 1.0
    dose_scale: float = 1.0

    def __post_init__(self):
        if self.defocus_scale <= 0 or self.dose_scale <= 0:
            raise LithoError("corner scales must be positive")


DEFAULT_CORNERS = (ProcessCorner("nominal", 1.0, 1.0),
                   ProcessCorner("inner", 1.05, 0.98),
                   ProcessCorner("outer", 1.0, 1.02))


def gaussian_kernel(sigma: float, support: int) -> np.ndarray:
    if support % 2 != 1:
        raise LithoError("kernel support must be odd")
    r = support // 2
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    h = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return h / h.sum()


@dataclass(frozen=True)
class WaferResult:
    """Per-corner binary wafer grids; corner 0 is nominal."""

    grids: tuple
    corners: tuple
    nominal_index: int = 0

    @property
    def nominal(self) -> np.ndarray:
        return self.grids[self.nominal_index]


class _CornerConv:
    """FFT convolution plans for one (grid shape, corner, dtype) triple."""

    def __init__(self, shape, kernels, dtype=np.float64):
        kh = kernels[0].shape[0]
        self.shape = shape
        self.dtype = np.dtype(dtype)
        self.fshape = (sfft.next_fast_len(shape[0] + kh - 1),
                       sfft.next_fast_len(shape[1] + kh - 1))
        self.off = kh // 2
        self.spectra = [sfft.rfft2(k.astype(self.dtype), self.fshape) for k in kernels]
        self.spectra_corr = [sfft.rfft2(np.ascontiguousarray(k[::-1, ::-1], dtype=self.dtype),
                                        self.fshape) for k in kernels]

    def _crop(self, y):
        return y[self.off:self.off + self.shape[0], self.off:self.off + self.shape[1]]

    def _apply(self, x, spec):
        return self._crop(sfft.irfft2(sfft.rfft2(x, self.fshape) * spec, self.fshape))

    def conv(self, x, k: int) -> np.ndarray:
        return self._apply(x, self.spectra[k])

    def corr(self, x, k: int) -> np.ndarray:
        return self._apply(x, self.spectra_corr[k])

    def conv_all(self, x) -> list:
        """x convolved with every kernel, sharing one forward transform."""
        fx = sfft.rfft2(x, self.fshape)
        return [self._crop(sfft.irfft2(fx * s, self.fshape)) for s in self.spectra]


class LithoModel:
    """Kernel set + resist threshold + process corners; immutable."""

    def __init__(self, sigmas=(DEFAULT_SIGMA,), weights=None, support: int = DEFAULT_SUPPORT,
                 resist_threshold: float = DEFAULT_THRESHOLD, corners=DEFAULT_CORNERS):
        self.sigmas = tuple(float(s) for s in sigmas)
        if not self.sigmas or any(s <= 0 for s in self.sigmas):
            raise LithoError("need at least one positive kernel sigma")
        raw = tuple(1.0 for _ in self.sigmas) if weights is None else tuple(map(float, weights))
        if len(raw) != len(self.sigmas) or any(w < 0 for w in raw) or sum(raw) <= 0:
            raise LithoError("weights must be non-negative and match sigmas")
        total = sum(raw)
        self.weights = tuple(w / total for w in raw)
        self.support = int(support)
        if not 0.0 < resist_threshold < 1.0:
            raise LithoError("resist threshold must lie in (0,1)")
        self.resist_threshold = float(resist_threshold)
        self.corners = tuple(corners)
        if not self.corners:
            raise LithoError("need at least one process corner")
        self._plans: OrderedDict = OrderedDict()

    @property
    def nominal_index(self) -> int:
        return 0

    def kernels_for(self, corner: ProcessCorner):
        return [gaussian_kernel(s * corner.defocus_scale, self.support) for s in self.sigmas]

    def convolver(self, shape, corner: ProcessCorner, dtype=np.float64) -> _CornerConv:
        key = (shape, corner.defocus_scale, np.dtype(dtype).str)
        plan = self._plans.get(key)
        if plan is None:
            plan = _CornerConv(shape, self.kernels_for(corner), dtype)
            self._plans[key] = plan
            while len(self._plans) > 8:  # bound plan memory
                self._plans.popitem(last=False)
        else:
            self._plans.move_to_end(key)
        return plan

    def intensity(self, mask: np.ndarray, corner: ProcessCorner | None = None) -> np.ndarray:
        corner = self.corners[0] if corner is None else corner
        m = np.asarray(mask, dtype=np.float64)
        conv = self.convolver(m.shape, corner)
        acc = np.zeros_like(m)
        for k, w in enumerate(self.weights):
            a = conv.conv(m, k)
            acc += w * (a * a)
        return corner.dose_scale * acc

    def to_dict(self) -> dict:
        return {"sigmas": list(self.sigmas), "weights": list(self.weights),
                "support": self.support, "resist_threshold": self.resist_threshold,
                "corners": [{"name": c.name, "defocus_scale": c.defocus_scale,
                             "dose_scale": c.dose_scale} for c in self.corners]}

    @classmethod
    def from_dict(cls, d: dict) -> "LithoModel":
        corners = d.get("corners")
        if corners is not None:
            corners = tuple(ProcessCorner(c["name"], float(c.get("defocus_scale", 1.0)),
                                          float(c.get("dose_scale", 1.0))) for c in corners)
        else:
            corners = DEFAULT_CORNERS
        return cls(sigmas=d.get("sigmas", (DEFAULT_SIGMA,)),
                   weights=d.get("weights"),
                   support=d.get("support", DEFAULT_SUPPORT),
                   resist_threshold=d.get("resist_threshold", DEFAULT_THRESHOLD),
                   corners=corners)


def simulate(mask: np.ndarray, model: LithoModel, corner: ProcessCorner | None = None) -> np.ndarray:
    """Binary wafer: intensity >= resist threshold."""
    i = model.intensity(mask, corner)
    return (i >= model.resist_threshold).astype(np.uint8)


def simulate_corners(mask: np.ndarray, model: LithoModel) -> WaferResult:
    grids = tuple(simulate(mask, model, c) for c in model.corners)
    return WaferResult(grids, model.corners, model.nominal_index)


def pv_band(result: WaferResult) -> int:
    """|union of corner foregrounds| - |intersection|, in nm^2 (= pixels)."""
    union = np.zeros_like(result.grids[0], dtype=bool)
    inter = np.ones_like(result.grids[0], dtype=bool)
    for g in result.grids:
        fg = g.astype(bool)
        union |= fg
        inter &= fg
    return int(union.sum()) - int(inter.sum())
