"""Shared helpers: synthetic case directories in the on-disk dataset format."""
import json
import struct

import numpy as np
import pytest

# the whole directory is skipped when the trainer package (or torch) is not
# installed, so the core OPC suite stands alone
pytest.importorskip("torch")
pytest.importorskip("damotrainer")


def write_bin_grid(path, grid):
    a = np.ascontiguousarray(grid, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(b"VGRD" + struct.pack("<BBII", 1, 0, a.shape[0], a.shape[1]))
        f.write(a.tobytes())


def make_synthetic_case(root, case_id, group, size=64, seed=None):
    """One case directory with random-ish but structured binary grids."""
    d = root / str(group) / case_id
    d.mkdir(parents=True)
    rng = np.random.default_rng(seed if seed is not None else abs(hash(case_id)) % 2**32)
    design = np.zeros((size, size), dtype=np.uint8)
    for _ in range(group):
        cy, cx = rng.integers(8, size - 8, size=2)
        design[cy - 2:cy + 3, cx - 2:cx + 3] = 1
    sraf = np.roll(design, 5, axis=1) & ~design
    mask = design | np.roll(design, 2, axis=0)
    wafer = np.roll(mask, 1, axis=0)
    grids = {"design": design, "sraf": sraf, "mask": mask, "wafer": wafer}
    for role, g in grids.items():
        write_bin_grid(d / f"{role}.bin", g)
    (d / "meta.json").write_text(
        json.dumps({"case_id": case_id, "group": group, "via_count": group}))
    return grids


@pytest.fixture
def synthetic_dataset(tmp_path):
    root = tmp_path / "cases"
    for i in range(4):
        make_synthetic_case(root, f"g1_c{i:05d}", 1, size=64, seed=100 + i)
    return root
