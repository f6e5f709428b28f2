"""Dataset access over the OPC data factory's on-disk case format.

This package deliberately talks to the OPC toolkit only through its file
formats (binary/PNG grids, ``meta.json`` case directories, and
``<case-id>.mask.png`` emission), so the readers and writers here mirror
those formats without importing the toolkit.

A *case directory* contains ``design`` / ``sraf`` / ``mask`` / ``wafer``
grids (binary ``.bin`` preferred over ``.png``) plus ``meta.json``.  Grids
are 1 nm/pixel with +y up.  For training, the central crop of each grid is
average-pooled to the model resolution, giving soft [0, 1] images, and packed
into 3-channel images with the fixed channel semantics design=R, SRAF=G,
mask=B (wafer images carry the wafer in the mask channel, and the SRAF-free
design target ``w_r`` carries the design there, so it compares like-for-like
with predicted wafers).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

BIN_MAGIC = b"VGRD"
_BIN_DTYPES = {0: np.uint8, 1: np.float32}

GRID_ROLES = ("design", "sraf", "mask", "wafer")


class DataFormatError(ValueError):
    """Raised when an on-disk grid or case directory is malformed."""


def read_grid_bin(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(14)
        if len(head) != 14 or head[:4] != BIN_MAGIC:
            raise DataFormatError(f"not a grid file: {path}")
        ver, code, h, w = struct.unpack("<BBII", head[4:])
        if ver != 1 or code not in _BIN_DTYPES:
            raise DataFormatError(f"unsupported grid version/dtype in {path}")
        data = np.frombuffer(f.read(), dtype=_BIN_DTYPES[code])
    if data.size != h * w:
        raise DataFormatError(f"truncated grid file: {path}")
    return data.reshape(h, w).copy()


def read_grid_png(path) -> np.ndarray:
    a = np.asarray(Image.open(path).convert("L"))[::-1]
    return (a > 127).astype(np.uint8)


def read_grid(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".bin":
        return read_grid_bin(path)
    return read_grid_png(path)


def write_mask_png(grid: np.ndarray, path) -> None:
    """Write a binary mask grid as an 8-bit PNG with +y up (row 0 on top)."""
    a = (np.asarray(grid) > 0).astype(np.uint8) * 255
    Image.fromarray(a[::-1], mode="L").save(path, format="PNG")


@dataclass(frozen=True)
class Case:
    case_id: str
    group: int
    directory: Path
    grids: dict  # role -> Path


def find_cases(root) -> list[Case]:
    """Discover case directories under ``root`` (any directory holding meta.json)."""
    root = Path(root)
    cases = []
    for meta_path in sorted(root.rglob("meta.json")):
        case_dir = meta_path.parent
        with open(meta_path, encoding="utf-8") as f:
            meta = json.load(f)
        grids = {}
        for role in GRID_ROLES:
            for ext in (".bin", ".png"):
                p = case_dir / f"{role}{ext}"
                if p.exists():
                    grids[role] = p
                    break
        if len(grids) != len(GRID_ROLES):
            continue
        cases.append(Case(case_id=str(meta.get("case_id", case_dir.name)),
                          group=int(meta.get("group", meta.get("via_count", 0))),
                          directory=case_dir, grids=grids))
    if not cases:
        raise DataFormatError(f"no case directories under {root}")
    cases.sort(key=lambda c: (c.group, c.case_id))
    return cases


def _center_crop(a: np.ndarray, size: int) -> np.ndarray:
    h, w = a.shape
    size = min(size, h, w)
    y0 = (h - size) // 2
    x0 = (w - size) // 2
    return a[y0:y0 + size, x0:x0 + size]


def _pool(a: np.ndarray, resolution: int) -> np.ndarray:
    h = a.shape[0]
    if h % resolution:
        raise DataFormatError(
            f"crop size {h} not divisible by resolution {resolution}")
    f = h // resolution
    return a.astype(np.float32).reshape(resolution, f, resolution, f).mean(axis=(1, 3))


def load_case_grids(case: Case, resolution: int, crop: int = 1024) -> dict:
    """Load one case's grids, center-cropped and pooled to ``resolution``."""
    out = {}
    for role, path in case.grids.items():
        g = read_grid(path)
        out[role] = _pool(_center_crop(g, crop), resolution)
    return out


def pack_mask_image(design, sraf, mask) -> np.ndarray:
    return np.stack([design, sraf, mask])


def pack_design_image(design, sraf) -> np.ndarray:
    return np.stack([design, sraf, np.zeros_like(design)])


def pack_wafer_image(wafer) -> np.ndarray:
    z = np.zeros_like(wafer)
    return np.stack([z, z, wafer])


def pack_design_target(design) -> np.ndarray:
    """SRAF-free design rendered in the wafer channel (the wafer-shape target)."""
    z = np.zeros_like(design)
    return np.stack([z, z, design])


class CaseSet:
    """All cases of a dataset as packed image tensors at one resolution.

    Exposes ``design_img`` (condition for mask generation), ``mask_img``
    (condition for wafer simulation / mask ground truth), ``wafer_img``
    (wafer ground truth) and ``w_r`` (SRAF-free design target), each of shape
    ``(N, 3, S, S)``.
    """

    def __init__(self, cases: list[Case], resolution: int, crop: int = 1024,
                 dtype: torch.dtype = torch.float32) -> None:
        self.cases = list(cases)
        self.resolution = resolution
        self.crop = crop
        design_img, mask_img, wafer_img, w_r = [], [], [], []
        for case in self.cases:
            g = load_case_grids(case, resolution, crop)
            design_img.append(pack_design_image(g["design"], g["sraf"]))
            mask_img.append(pack_mask_image(g["design"], g["sraf"], g["mask"]))
            wafer_img.append(pack_wafer_image(g["wafer"]))
            w_r.append(pack_design_target(g["design"]))
        self.design_img = torch.as_tensor(np.stack(design_img), dtype=dtype)
        self.mask_img = torch.as_tensor(np.stack(mask_img), dtype=dtype)
        self.wafer_img = torch.as_tensor(np.stack(wafer_img), dtype=dtype)
        self.w_r = torch.as_tensor(np.stack(w_r), dtype=dtype)

    def __len__(self) -> int:
        return len(self.cases)

    def batch(self, idx: torch.Tensor) -> dict:
        return {
            "w": self.design_img[idx],
            "x": self.mask_img[idx],
            "y": self.wafer_img[idx],
            "w_r": self.w_r[idx],
        }

    def sample(self, batch_size: int, generator: torch.Generator) -> dict:
        idx = torch.randint(len(self.cases), (batch_size,), generator=generator)
        return self.batch(idx)
