"""Coarse-to-fine full-chip splitting.

Vias are first grouped into clusters by epsilon-connectivity (DBSCAN with
min_pts=1 degenerates to connected components of the graph whose edges join
via centers at Euclidean distance <= eps). Each cluster is then split by
KMeans++ into the smallest number of windows such that every window owns at
most K vias and fully contains them; ownership is a partition even when
window rectangles overlap geometrically.

The KMeans procedure is pinned down exactly so independent checkers can
reproduce it: per-cluster rng seeded from (seed, smallest member id, k);
KMeans++ D^2 seeding by cumulative-sum inversion; Lloyd assignment ties break
toward the lowest centroid index; centroids that lose all members keep their
position during iteration and are dropped at the end; window centers are the
final centroids rounded half-up to integer nm.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .layout import Layout, Via, Window


class SplitError(RuntimeError):
    pass


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 400.0
    min_pts: int = 1

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.min_pts != 1:
            raise ValueError("min_pts is fixed at 1 (no noise points)")


@dataclass(frozen=True)
class SplitParams:
    max_vias: int = 5
    window: int = 1024
    kmeans_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.max_vias < 1 or self.window < 1 or self.kmeans_iters < 1:
            raise ValueError("invalid split parameters")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class Cluster:
    via_ids: tuple[int, ...]
    centroid: tuple[int, int]


@dataclass
class WindowSet:
    windows: list
    assignment: dict

    @property
    def via_count(self) -> int:
        return sum(len(w.via_ids) for w in self.windows)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def dbscan_cluster(vias, params: DbscanParams) -> list[Cluster]:
    """Connected components of the eps-adjacency graph on via centers,
    ordered by ascending smallest member id."""
    vias = sorted(vias, key=lambda v: v.id)
    n = len(vias)
    if n == 0:
        return []
    pts = np.array([v.center for v in vias], dtype=np.float64)
    eps = float(params.eps)
    eps2 = eps * eps
    cell = {}
    keys = np.floor(pts / eps).astype(np.int64)
    for i, (cx, cy) in enumerate(keys):
        cell.setdefault((int(cx), int(cy)), []).append(i)

    visited = np.zeros(n, dtype=bool)
    clusters = []
    for start in range(n):
        if visited[start]:
            continue
        visited[start] = True
        comp = [start]
        stack = [start]
        while stack:
            i = stack.pop()
            cx, cy = int(keys[i, 0]), int(keys[i, 1])
            cand = []
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    cand.extend(cell.get((cx + dx, cy + dy), ()))
            cand = [j for j in cand if not visited[j]]
            if not cand:
                continue
            arr = np.array(cand)
            d2 = np.sum((pts[arr] - pts[i]) ** 2, axis=1)
            hits = arr[d2 <= eps2]
            for j in hits:
                visited[j] = True
                comp.append(int(j))
                stack.append(int(j))
        ids = tuple(sorted(vias[i].id for i in comp))
        cpts = pts[comp]
        centroid = (_round_half_up(float(cpts[:, 0].mean())),
                    _round_half_up(float(cpts[:, 1].mean())))
        clusters.append(Cluster(ids, centroid))
    clusters.sort(key=lambda c: c.via_ids[0])
    return clusters


def _kmeanspp_init(pts: np.ndarray, k: int, rng) -> np.ndarray:
    n = len(pts)
    centers = np.empty((k, 2), dtype=np.float64)
    centers[0] = pts[int(rng.integers(n))]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        cum = np.cumsum(d2)
        total = float(cum[-1])
        if total <= 0.0:
            j = int(rng.integers(n))
        else:
            u = rng.random() * total
            j = min(int(np.searchsorted(cum, u, side="right")), n - 1)
        centers[c] = pts[j]
        np.minimum(d2, np.sum((pts - pts[j]) ** 2, axis=1), out=d2)
    return centers


def _lloyd(pts: np.ndarray, centers: np.ndarray, iters: int) -> np.ndarray:
    """Returns the final assignment; ties go to the lowest centroid index."""
    assign = None
    for _ in range(iters):
        d2 = np.sum((pts[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(len(centers)):
            members = pts[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return assign


def _windows_for_assignment(vias, pts, assign, k, params) -> list[Window] | None:
    """Build one window per non-empty sub-cluster, or None if any window
    would exceed capacity or fail to contain a member via."""
    H = params.window
    half = H // 2
    windows = []
    for c in range(k):
        member_idx = np.flatnonzero(assign == c)
        if len(member_idx) == 0:
            continue
        if len(member_idx) > params.max_vias:
            return None
        cx = _round_half_up(float(pts[member_idx, 0].mean()))
        cy = _round_half_up(float(pts[member_idx, 1].mean()))
        x0, y0 = cx - half, cy - half
        for i in member_idx:
            r = vias[i].rect
            if r.x < x0 or r.x2 > x0 + H or r.y < y0 or r.y2 > y0 + H:
                return None
        ids = tuple(sorted(vias[i].id for i in member_idx))
        windows.append(Window((cx, cy), H, ids))
    windows.sort(key=lambda w: w.via_ids[0])
    return windows


def kmeans_split(cluster_vias, params: SplitParams) -> list[Window]:
    """Smallest k whose KMeans++ sub-clusters all fit; falls back to one
    window per via when no k < V is valid."""
    vias = sorted(cluster_vias, key=lambda v: v.id)
    V = len(vias)
    if V == 0:
        return []
    H = params.window
    if V == 1:
        c = vias[0].center
        return [Window((_round_half_up(c[0]), _round_half_up(c[1])), H, (vias[0].id,))]
    pts = np.array([v.center for v in vias], dtype=np.float64)
    min_id = vias[0].id
    for k in range(1, V):
        rng = np.random.default_rng(np.random.SeedSequence([params.seed, min_id, k]))
        centers = _kmeanspp_init(pts, k, rng)
        assign = _lloyd(pts, centers, params.kmeans_iters)
        windows = _windows_for_assignment(vias, pts, assign, k, params)
        if windows is not None:
            return windows
    # fallback: one window per via, centered at each via
    return [Window((_round_half_up(v.center[0]), _round_half_up(v.center[1])), H, (v.id,))
            for v in vias]


def split_full_chip(layout: Layout, d: DbscanParams, s: SplitParams) -> WindowSet:
    clusters = dbscan_cluster(layout.vias, d)
    by_id = {v.id: v for v in layout.vias}
    windows: list[Window] = []
    for cl in clusters:
        windows.extend(kmeans_split([by_id[i] for i in cl.via_ids], s))
    assignment: dict[int, int] = {}
    for w_idx, w in enumerate(windows):
        for vid in w.via_ids:
            if vid in assignment:
                raise SplitError(f"via {vid} owned by two windows")
            assignment[vid] = w_idx
    if len(assignment) != len(layout.vias):
        raise SplitError("ownership is not a partition of the via set")
    for w in windows:
        if len(w.via_ids) > s.max_vias:
            raise SplitError("window exceeds via capacity")
        rect = w.rect()
        for vid in w.via_ids:
            if not rect.contains_rect(by_id[vid].rect):
                raise SplitError(f"via {vid} escapes its window")
    return WindowSet(windows, assignment)


def save_windows(ws: WindowSet, path) -> None:
    data = [{"center": [w.center[0], w.center[1]], "size": w.size,
             "vias": list(w.via_ids)} for w in ws.windows]
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def load_windows(path) -> WindowSet:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    windows = [Window((int(d["center"][0]), int(d["center"][1])), int(d["size"]),
                      tuple(d["vias"])) for d in data]
    assignment = {vid: i for i, w in enumerate(windows) for vid in w.via_ids}
    return WindowSet(windows, assignment)
