"""Geometric data model and text I/O for via-layer layouts.

All geometry lives on an integer nanometer grid. A layout holds four
independent layers: design vias, SRAF rectangles, mask polygons, and wafer
contour polygons, all inside a declared bounding rectangle.

File schema (UTF-8, one record per line, ``#`` starts a comment)::

    BOUNDS x y w h
    VIA id x y w h
    SRAF x y w h
    MASKPOLY n x1 y1 ... xn yn
    WAFER n x1 y1 ... xn yn
"""
from __future__ import annotations

from dataclasses import dataclass

# cell size of the spatial index used by region queries, nm
GRID_CELL = 512

DEFAULT_VIA_SIZE = 70

Polygon = tuple[tuple[int, int], ...]


class LayoutError(ValueError):
    """Invariant violation in layout data."""


class LayoutParseError(LayoutError):
    """Malformed layout file; message carries the 1-based line number."""


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle, lower-left anchored, strictly positive size."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise LayoutError(f"rect size must be positive, got {self.w}x{self.h}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def contains_rect(self, other: "Rect") -> bool:
        return (self.x <= other.x and other.x2 <= self.x2
                and self.y <= other.y and other.y2 <= self.y2)

    def intersects(self, other: "Rect") -> bool:
        return (self.x < other.x2 and other.x < self.x2
                and self.y < other.y2 and other.y < self.y2)


@dataclass(frozen=True)
class Via:
    """A square contact shape; id is unique within a layout."""

    id: int
    rect: Rect

    @property
    def center(self) -> tuple[float, float]:
        return self.rect.center()


@dataclass(frozen=True)
class Window:
    """An H x H square clip owning a set of via ids."""

    center: tuple[int, int]
    size: int
    via_ids: tuple[int, ...]

    def rect(self) -> Rect:
        # lower-left so that the window covers [c - H//2, c - H//2 + H)
        half = self.size // 2
        return Rect(self.center[0] - half, self.center[1] - half, self.size, self.size)


def _poly_in_bounds(poly: Polygon, bounds: Rect) -> bool:
    # vertices inside an axis-aligned bounds rect imply the polygon is inside
    return all(bounds.x <= x <= bounds.x2 and bounds.y <= y <= bounds.y2
               for x, y in poly)


class Layout:
    """Immutable layered geometry container with an indexed region query."""

    def __init__(self, bounds: Rect, vias=(), srafs=(), mask_polys=(), wafer_polys=()):
        self.bounds = bounds
        # canonical id order makes iteration and equality order-insensitive
        self.vias: tuple[Via, ...] = tuple(sorted(vias, key=lambda v: v.id))
        self.srafs: tuple[Rect, ...] = tuple(srafs)
        self.mask_polys: tuple[Polygon, ...] = tuple(tuple(map(tuple, p)) for p in mask_polys)
        self.wafer_polys: tuple[Polygon, ...] = tuple(tuple(map(tuple, p)) for p in wafer_polys)
        self._validate()
        self._index = self._build_index()

    def _validate(self):
        seen = set()
        for v in self.vias:
            if v.id in seen:
                raise LayoutError(f"duplicate via id {v.id}")
            seen.add(v.id)
            if not self.bounds.contains_rect(v.rect):
                raise LayoutError(f"via {v.id} escapes bounds")
        for r in self.srafs:
            if not self.bounds.contains_rect(r):
                raise LayoutError("sraf escapes bounds")
        for name, polys in (("mask", self.mask_polys), ("wafer", self.wafer_polys)):
            for p in polys:
                if len(p) < 3:
                    raise LayoutError(f"{name} polygon needs >= 3 vertices")
                if not _poly_in_bounds(p, self.bounds):
                    raise LayoutError(f"{name} polygon escapes bounds")

    def _build_index(self):
        index: dict[tuple[int, int], list[int]] = {}
        for i, v in enumerate(self.vias):
            r = v.rect
            for cx in range(r.x // GRID_CELL, (r.x2 - 1) // GRID_CELL + 1):
                for cy in range(r.y // GRID_CELL, (r.y2 - 1) // GRID_CELL + 1):
                    index.setdefault((cx, cy), []).append(i)
        return index

    def vias_in_region(self, region: Rect) -> list[Via]:
        """Vias fully contained in region (not merely intersecting), by id."""
        hits = set()
        for cx in range(region.x // GRID_CELL, (region.x2 - 1) // GRID_CELL + 1):
            for cy in range(region.y // GRID_CELL, (region.y2 - 1) // GRID_CELL + 1):
                for i in self._index.get((cx, cy), ()):
                    if region.contains_rect(self.vias[i].rect):
                        hits.add(i)
        return sorted((self.vias[i] for i in hits), key=lambda v: v.id)

    def replace(self, **layers) -> "Layout":
        """A copy with the named layers replaced (bounds kept unless given)."""
        kw = dict(bounds=self.bounds, vias=self.vias, srafs=self.srafs,
                  mask_polys=self.mask_polys, wafer_polys=self.wafer_polys)
        kw.update(layers)
        return Layout(**kw)

    def __eq__(self, other):
        if not isinstance(other, Layout):
            return NotImplemented
        return (self.bounds == other.bounds and self.vias == other.vias
                and self.srafs == other.srafs and self.mask_polys == other.mask_polys
                and self.wafer_polys == other.wafer_polys)

    def __repr__(self):
        return (f"Layout(bounds={self.bounds}, vias={len(self.vias)}, "
                f"srafs={len(self.srafs)}, mask_polys={len(self.mask_polys)}, "
                f"wafer_polys={len(self.wafer_polys)})")


def _ints(parts, line_no, expect=None):
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise LayoutParseError(f"line {line_no}: non-integer field") from None
    if expect is not None and len(vals) != expect:
        raise LayoutParseError(f"line {line_no}: expected {expect} fields, got {len(vals)}")
    return vals


def _parse_poly(parts, line_no) -> Polygon:
    vals = _ints(parts, line_no)
    if not vals:
        raise LayoutParseError(f"line {line_no}: missing vertex count")
    n, coords = vals[0], vals[1:]
    if n < 3 or len(coords) != 2 * n:
        raise LayoutParseError(f"line {line_no}: polygon needs {2 * max(n, 3)} coords for n={n}")
    return tuple((coords[2 * i], coords[2 * i + 1]) for i in range(n))


def loads_layout(text: str) -> Layout:
    bounds = None
    vias, srafs, mask_polys, wafer_polys = [], [], [], []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *parts = line.split()
        tag = tag.upper()
        if tag == "BOUNDS":
            if bounds is not None:
                raise LayoutParseError(f"line {line_no}: duplicate BOUNDS")
            x, y, w, h = _ints(parts, line_no, 4)
            try:
                bounds = Rect(x, y, w, h)
            except LayoutError as e:
                raise LayoutParseError(f"line {line_no}: {e}") from None
        elif tag == "VIA":
            vid, x, y, w, h = _ints(parts, line_no, 5)
            vias.append(Via(vid, Rect(x, y, w, h)))
        elif tag == "SRAF":
            x, y, w, h = _ints(parts, line_no, 4)
            srafs.append(Rect(x, y, w, h))
        elif tag == "MASKPOLY":
            mask_polys.append(_parse_poly(parts, line_no))
        elif tag == "WAFER":
            wafer_polys.append(_parse_poly(parts, line_no))
        else:
            raise LayoutParseError(f"line {line_no}: unknown record {tag!r}")
    if bounds is None:
        raise LayoutParseError("missing BOUNDS record")
    return Layout(bounds, vias, srafs, mask_polys, wafer_polys)


def load_layout(path) -> Layout:
    with open(path, "r", encoding="utf-8") as f:
        return loads_layout(f.read())


def dumps_layout(layout: Layout) -> str:
    out = [f"BOUNDS {layout.bounds.x} {layout.bounds.y} {layout.bounds.w} {layout.bounds.h}"]
    for v in sorted(layout.vias, key=lambda v: v.id):
        r = v.rect
        out.append(f"VIA {v.id} {r.x} {r.y} {r.w} {r.h}")
    for r in layout.srafs:
        out.append(f"SRAF {r.x} {r.y} {r.w} {r.h}")
    for tag, polys in (("MASKPOLY", layout.mask_polys), ("WAFER", layout.wafer_polys)):
        for p in polys:
            coords = " ".join(f"{x} {y}" for x, y in p)
            out.append(f"{tag} {len(p)} {coords}")
    return "\n".join(out) + "\n"


def save_layout(layout: Layout, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_layout(layout))
