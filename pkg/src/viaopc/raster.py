"""Layout <-> image conversion at 1 nm per pixel.

Grids are numpy arrays indexed [row, col] with row 0 at the LOWEST y
(y-up convention); PNG emission flips vertically so images read naturally.
Pixel (i, j) of a clip anchored at (x0, y0) covers the 1 nm^2 cell
[x0+j, x0+j+1) x [y0+i, y0+i+1); a pixel is foreground iff its cell center
lies inside a shape, so abutting rectangles never double-cover.

Mask and wafer polygon layers fill with the even-odd rule over all rings of
the layer: extraction emits CCW outer rings and CW hole rings, and re-filling
them reproduces the source grid exactly.
"""
from __future__ import annotations

import struct

import numpy as np
from PIL import Image
from scipy import ndimage

from .layout import Layout, Rect

BIN_MAGIC = b"VGRD"
_BIN_DTYPES = {0: np.uint8, 1: np.float32}
_BIN_CODES = {np.dtype(np.uint8): 0, np.dtype(np.float32): 1}

CHANNEL_ORDER = ("design", "sraf", "mask", "wafer")


class RasterError(ValueError):
    pass


class ClipImage:
    """Square multi-channel pixel raster with named channel roles."""

    def __init__(self, channels: dict[str, np.ndarray]):
        if not channels:
            raise RasterError("clip needs at least one channel")
        shapes = {a.shape for a in channels.values()}
        if len(shapes) != 1:
            raise RasterError(f"channel shapes differ: {shapes}")
        (shape,) = shapes
        if len(shape) != 2 or shape[0] != shape[1]:
            raise RasterError(f"clip must be square 2-D, got {shape}")
        self.channels = dict(channels)
        self.size = shape[0]

    def __getitem__(self, role: str) -> np.ndarray:
        return self.channels[role]

    def __contains__(self, role: str) -> bool:
        return role in self.channels

    def __eq__(self, other):
        if not isinstance(other, ClipImage):
            return NotImplemented
        return (list(self.channels) == list(other.channels)
                and all(np.array_equal(self.channels[k], other.channels[k])
                        for k in self.channels))


def _fill_rects(grid: np.ndarray, rects, x0: int, y0: int) -> None:
    h, w = grid.shape
    for r in rects:
        j0, j1 = max(r.x - x0, 0), min(r.x2 - x0, w)
        i0, i1 = max(r.y - y0, 0), min(r.y2 - y0, h)
        if j0 < j1 and i0 < i1:
            grid[i0:i1, j0:j1] = 1


def _fill_polys_evenodd(grid: np.ndarray, polys, x0: int, y0: int) -> None:
    """Even-odd fill at cell centers into a bool grid; exact for integer
    rectilinear rings (vertical edges toggle parity, horizontal edges never
    cross a half-integer scanline)."""
    h, w = grid.shape
    toggle = np.zeros((h, w), dtype=np.uint16)
    slow = []
    for poly in polys:
        n = len(poly)
        rectilinear = all(poly[k][0] == poly[(k + 1) % n][0]
                          or poly[k][1] == poly[(k + 1) % n][1] for k in range(n))
        if not rectilinear:
            slow.append(poly)
            continue
        for k in range(n):
            (xa, ya), (xb, yb) = poly[k], poly[(k + 1) % n]
            if xa != xb:
                continue
            i0, i1 = max(min(ya, yb) - y0, 0), min(max(ya, yb) - y0, h)
            c = xa - x0
            if i0 < i1 and c < w:
                toggle[i0:i1, max(c, 0)] += 1
    if toggle.any():
        grid ^= (np.cumsum(toggle, axis=1) & 1).astype(bool)
    for poly in slow:
        _fill_poly_scanline(grid, poly, x0, y0)


def _fill_poly_scanline(grid, poly, x0, y0):
    # generic even-odd ray cast per row, for non-rectilinear polygons
    h, w = grid.shape
    pts = np.asarray(poly, dtype=float)
    ylo = max(int(np.floor(pts[:, 1].min())) - y0, 0)
    yhi = min(int(np.ceil(pts[:, 1].max())) - y0, h)
    xs1, ys1 = pts[:, 0], pts[:, 1]
    xs2, ys2 = np.roll(xs1, -1), np.roll(ys1, -1)
    for i in range(ylo, yhi):
        yc = y0 + i + 0.5
        hit = (ys1 < yc) != (ys2 < yc)
        if not hit.any():
            continue
        t = (yc - ys1[hit]) / (ys2[hit] - ys1[hit])
        cross = np.sort(xs1[hit] + t * (xs2[hit] - xs1[hit]))
        for a, b in zip(cross[0::2], cross[1::2]):
            j0 = max(int(np.ceil(a - x0 - 0.5)), 0)
            j1 = min(int(np.ceil(b - x0 - 0.5)), w)
            if j0 < j1:
                grid[i, j0:j1] ^= True


def rasterize(layout: Layout, window_center: tuple[int, int], size: int) -> ClipImage:
    """Rasterize all four layers of a size x size window at 1 nm/pixel."""
    if size <= 0 or size % 2:
        raise RasterError(f"window size must be positive and even, got {size}")
    half = size // 2
    x0, y0 = window_center[0] - half, window_center[1] - half
    channels = {}
    for role in CHANNEL_ORDER:
        grid = np.zeros((size, size), dtype=np.uint8)
        if role == "design":
            _fill_rects(grid, (v.rect for v in layout.vias), x0, y0)
        elif role == "sraf":
            _fill_rects(grid, layout.srafs, x0, y0)
        else:
            polys = layout.mask_polys if role == "mask" else layout.wafer_polys
            if polys:
                bgrid = grid.view(bool)
                _fill_polys_evenodd(bgrid, polys, x0, y0)
        channels[role] = grid
    return ClipImage(channels)


def center_crop_grid(a: np.ndarray, out_size: int | None = None) -> np.ndarray:
    n = a.shape[0]
    out = n // 2 if out_size is None else out_size
    if a.shape != (n, n) or out > n or (n - out) % 2:
        raise RasterError(f"cannot center-crop {a.shape} to {out}")
    o = (n - out) // 2
    return a[o:o + out, o:o + out].copy()


def recover_grid(patch: np.ndarray, context: np.ndarray) -> np.ndarray:
    p, n = patch.shape[0], context.shape[0]
    if patch.shape != (p, p) or context.shape != (n, n) or p > n or (n - p) % 2:
        raise RasterError(f"cannot recover {patch.shape} into {context.shape}")
    out = context.copy()
    o = (n - p) // 2
    out[o:o + p, o:o + p] = patch
    return out


def center_crop(img: ClipImage, out_size: int | None = None) -> ClipImage:
    """The centered half-size (or out_size) sub-grid of every channel."""
    return ClipImage({k: center_crop_grid(v, out_size) for k, v in img.channels.items()})


def recover(patch: ClipImage, context: ClipImage) -> ClipImage:
    """Context with its central region replaced by patch, channel-wise."""
    if list(patch.channels) != list(context.channels):
        raise RasterError("channel roles differ between patch and context")
    return ClipImage({k: recover_grid(patch[k], context[k]) for k in patch.channels})


_TURNS = {(1, 0): ((0, 1), (1, 0), (0, -1)),   # incoming +x: left, straight, right
          (0, 1): ((-1, 0), (0, 1), (1, 0)),
          (-1, 0): ((0, -1), (-1, 0), (0, 1)),
          (0, -1): ((1, 0), (0, -1), (-1, 0))}


def extract_polygons(channel: np.ndarray, with_labels: bool = False):
    """Boundary rings of each 4-connected foreground component.

    Returns integer-vertex rectilinear rings, CCW for outer boundaries and CW
    for holes, each rotated to start at its lexicographically smallest vertex
    and sorted deterministically. Values are thresholded at 0.5 first.
    """
    fg = np.asarray(channel) > 0.5
    if not fg.any():
        return []
    labels, _ = ndimage.label(fg)
    padded = np.zeros((fg.shape[0] + 2, fg.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = fg

    # directed boundary edges keep foreground on the left
    edges: dict[tuple[int, int], list] = {}

    def add_edges(pix_mask, start_of, delta):
        for i, j in np.argwhere(pix_mask):
            sx, sy = start_of(int(j), int(i))
            edges.setdefault((sx, sy), []).append((delta, int(labels[i, j])))

    core = padded[1:-1, 1:-1]
    add_edges(core & ~padded[:-2, 1:-1], lambda j, i: (j, i), (1, 0))        # bottom
    add_edges(core & ~padded[2:, 1:-1], lambda j, i: (j + 1, i + 1), (-1, 0))  # top
    add_edges(core & ~padded[1:-1, 2:], lambda j, i: (j + 1, i), (0, 1))     # right
    add_edges(core & ~padded[1:-1, :-2], lambda j, i: (j, i + 1), (0, -1))   # left

    rings = []
    for start in sorted(edges):
        while edges.get(start):
            d, label = edges[start].pop()
            ring = [start]
            pos = (start[0] + d[0], start[1] + d[1])
            prev = d
            while pos != start:
                outgoing = edges.get(pos, ())
                chosen = None
                for cand in _TURNS[prev]:
                    for k, (dd, _lab) in enumerate(outgoing):
                        if dd == cand:
                            chosen = outgoing.pop(k)
                            break
                    if chosen:
                        break
                assert chosen is not None, "open boundary ring"
                ring.append(pos)
                prev = chosen[0]
                pos = (pos[0] + prev[0], pos[1] + prev[1])
            # merge collinear runs
            merged = []
            m = len(ring)
            for k in range(m):
                ax, ay = ring[k - 1]
                bx, by = ring[k]
                cx, cy = ring[(k + 1) % m]
                if (bx - ax, by - ay) != (cx - bx, cy - by):
                    merged.append(ring[k])
            lo = merged.index(min(merged))
            merged = merged[lo:] + merged[:lo]
            rings.append((tuple(merged), label))

    rings.sort(key=lambda rl: (rl[0][0], rl[0]))
    if with_labels:
        return rings
    return [r for r, _ in rings]


def ring_signed_area(ring) -> float:
    """Shoelace area, positive for CCW rings."""
    pts = np.asarray(ring, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def rasterize_polys(polys, size: int, origin=(0, 0)) -> np.ndarray:
    """Even-odd fill of rings into a fresh size x size binary grid."""
    grid = np.zeros((size, size), dtype=bool)
    _fill_polys_evenodd(grid, polys, origin[0], origin[1])
    return grid.astype(np.uint8)


def write_grid_png(grid: np.ndarray, path) -> None:
    a = np.asarray(grid)
    if a.dtype != np.uint8 or a.max(initial=0) <= 1:
        a = (np.asarray(grid, dtype=float) * 255).round().clip(0, 255).astype(np.uint8)
    Image.fromarray(a[::-1], mode="L").save(path, format="PNG")


def read_grid_png(path, binary: bool = True) -> np.ndarray:
    a = np.asarray(Image.open(path).convert("L"))[::-1]
    if binary:
        return (a > 127).astype(np.uint8)
    return a.astype(np.float32) / 255.0


def write_rgb_png(design: np.ndarray, sraf: np.ndarray, mask: np.ndarray, path) -> None:
    """Inspection image with the fixed packing design=R, SRAF=G, mask=B."""
    chans = [np.asarray(c, dtype=float) for c in (design, sraf, mask)]
    rgb = np.stack([(c * 255).round().clip(0, 255).astype(np.uint8) for c in chans], axis=-1)
    Image.fromarray(rgb[::-1], mode="RGB").save(path, format="PNG")


def write_grid_bin(grid: np.ndarray, path) -> None:
    a = np.ascontiguousarray(grid)
    if a.dtype not in _BIN_CODES:
        a = a.astype(np.float32)
    code = _BIN_CODES[a.dtype]
    with open(path, "wb") as f:
        f.write(BIN_MAGIC + struct.pack("<BBII", 1, code, a.shape[0], a.shape[1]))
        f.write(a.tobytes())


def read_grid_bin(path) -> np.ndarray:
    with open(path, "rb") as f:
        head = f.read(14)
        if len(head) != 14 or head[:4] != BIN_MAGIC:
            raise RasterError(f"not a grid file: {path}")
        ver, code, h, w = struct.unpack("<BBII", head[4:])
        if ver != 1 or code not in _BIN_DTYPES:
            raise RasterError(f"unsupported grid version/dtype in {path}")
        data = np.frombuffer(f.read(), dtype=_BIN_DTYPES[code])
    if data.size != h * w:
        raise RasterError(f"truncated grid file: {path}")
    return data.reshape(h, w).copy()
