"""Bounded Voronoi tessellation by half-plane clipping."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

__all__ = ["Tessellation", "TessellationError", "voronoi_tessellate", "polygon_area"]

MIN_SEPARATION = 1e-6


class TessellationError(ValueError):
    pass


@dataclass
class Tessellation:
    """Cells of a Voronoi diagram clipped to an axis-aligned rectangle.

    ``polygons[i]`` is the CCW vertex list (positive shoelace area) of the cell
    seeded at ``seeds[i]`` whose marker id is ``ids[i]``.
    """

    bounds: tuple[float, float, float, float]
    ids: np.ndarray
    seeds: np.ndarray
    areas: np.ndarray
    # padded vertex storage; cell i uses vertices[i, :vertex_counts[i]]
    vertices: np.ndarray
    vertex_counts: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def polygon(self, i: int) -> np.ndarray:
        return self.vertices[i, :self.vertex_counts[i]]

    @property
    def polygons(self) -> list:
        return [self.polygon(i) for i in range(len(self))]

    @property
    def bounds_area(self) -> float:
        x0, y0, x1, y1 = self.bounds
        return (x1 - x0) * (y1 - y0)

    @property
    def cells(self) -> dict:
        """``marker_id -> {seed_px, polygon, area_px2}``."""
        return {int(i): {"seed_px": self.seeds[k], "polygon": self.polygon(k), "area_px2": float(self.areas[k])}
                for k, i in enumerate(self.ids)}

    def index_of(self) -> dict:
        return {int(i): k for k, i in enumerate(self.ids)}

    def area_map(self) -> dict:
        return dict(zip(self.ids.tolist(), self.areas.tolist()))


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertex order."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@njit(cache=True, nogil=True)
def _bucket(seeds, bounds, cell):
    """Sort seeds into a uniform grid of square buckets (CSR layout)."""
    n = seeds.shape[0]
    nx = max(1, int(np.ceil((bounds[2] - bounds[0]) / cell)))
    ny = max(1, int(np.ceil((bounds[3] - bounds[1]) / cell)))
    bx = np.empty(n, np.int64)
    by = np.empty(n, np.int64)
    start = np.zeros(nx * ny + 1, np.int64)
    for i in range(n):
        bx[i] = min(nx - 1, int((seeds[i, 0] - bounds[0]) / cell))
        by[i] = min(ny - 1, int((seeds[i, 1] - bounds[1]) / cell))
        start[by[i] * nx + bx[i] + 1] += 1
    for b in range(nx * ny):
        start[b + 1] += start[b]
    fill = start[:-1].copy()
    members = np.empty(n, np.int64)
    for i in range(n):
        b = by[i] * nx + bx[i]
        members[fill[b]] = i
        fill[b] += 1
    return nx, ny, bx, by, start, members


@njit(cache=True, nogil=True)
def _clip(poly, m, buf, sx, sy, dx, dy):
    # keep points with (p - s) . d <= |d|^2 / 2
    half = 0.5 * (dx * dx + dy * dy)
    out = 0
    for v in range(m):
        ax = poly[v, 0]
        ay = poly[v, 1]
        w = v + 1 if v + 1 < m else 0
        bx = poly[w, 0]
        by = poly[w, 1]
        fa = (ax - sx) * dx + (ay - sy) * dy - half
        fb = (bx - sx) * dx + (by - sy) * dy - half
        if fa <= 0.0:
            buf[out, 0] = ax
            buf[out, 1] = ay
            out += 1
        if (fa < 0.0 and fb > 0.0) or (fa > 0.0 and fb < 0.0):
            t = fa / (fa - fb)
            buf[out, 0] = ax + t * (bx - ax)
            buf[out, 1] = ay + t * (by - ay)
            out += 1
    for v in range(out):
        poly[v, 0] = buf[v, 0]
        poly[v, 1] = buf[v, 1]
    return out


@njit(cache=True, nogil=True)
def _circumradius2(poly, m, sx, sy):
    r2 = 0.0
    for v in range(m):
        ex = poly[v, 0] - sx
        ey = poly[v, 1] - sy
        e2 = ex * ex + ey * ey
        if e2 > r2:
            r2 = e2
    return r2


@njit(cache=True, nogil=True)
def _tessellate(seeds, bounds, cell, min_sep):
    """Clip the bounds rectangle by every rival's bisector, bucket ring by ring.

    After rings 0..R around a seed's bucket every unvisited rival is at least
    ``R * cell`` away; once that exceeds twice the cell's circumradius no
    bisector can cut it any more and the cell is final. Returns a duplicate
    pair ``(i, j)`` instead of cells when two seeds nearly coincide.
    """
    n = seeds.shape[0]
    nx, ny, bxs, bys, start, members = _bucket(seeds, bounds, cell)
    max_verts = 8
    verts = np.empty((n, max_verts, 2))
    counts = np.zeros(n, np.int64)
    poly = np.empty((n + 4, 2))
    buf = np.empty((n + 4, 2))
    x0, y0, x1, y1 = bounds[0], bounds[1], bounds[2], bounds[3]
    min_sep2 = min_sep * min_sep
    max_ring = max(nx, ny)
    for i in range(n):
        sx = seeds[i, 0]
        sy = seeds[i, 1]
        poly[0, 0] = x0
        poly[0, 1] = y0
        poly[1, 0] = x1
        poly[1, 1] = y0
        poly[2, 0] = x1
        poly[2, 1] = y1
        poly[3, 0] = x0
        poly[3, 1] = y1
        m = 4
        cx = bxs[i]
        cy = bys[i]
        for ring in range(max_ring + 1):
            if ring >= 2 and ((ring - 1) * cell) ** 2 > 4.0 * _circumradius2(poly, m, sx, sy):
                break
            for gy in range(cy - ring, cy + ring + 1):
                if gy < 0 or gy >= ny:
                    continue
                edge_row = gy == cy - ring or gy == cy + ring
                step = 1 if edge_row else 2 * ring
                gx = cx - ring
                while gx <= cx + ring:
                    if 0 <= gx < nx:
                        b = gy * nx + gx
                        for q in range(start[b], start[b + 1]):
                            j = members[q]
                            if j == i:
                                continue
                            dx = seeds[j, 0] - sx
                            dy = seeds[j, 1] - sy
                            if dx * dx + dy * dy < min_sep2:
                                return verts, counts, i, j
                            m = _clip(poly, m, buf, sx, sy, dx, dy)
                    if step == 0:
                        break
                    gx += step
        if m > max_verts:
            grown = np.empty((n, 2 * m, 2))
            grown[:, :max_verts] = verts
            verts = grown
            max_verts = 2 * m
        for v in range(m):
            verts[i, v, 0] = poly[v, 0]
            verts[i, v, 1] = poly[v, 1]
        counts[i] = m
    return verts, counts, -1, -1


@njit(cache=True, nogil=True)
def _areas(verts, counts):
    n = counts.shape[0]
    out = np.empty(n)
    for i in range(n):
        m = counts[i]
        a = 0.0
        for v in range(m):
            w = v + 1 if v + 1 < m else 0
            a += verts[i, v, 0] * verts[i, w, 1] - verts[i, w, 0] * verts[i, v, 1]
        out[i] = 0.5 * a
    return out


def _validate(seeds: np.ndarray, bounds, ids: np.ndarray) -> None:
    x0, y0, x1, y1 = bounds
    if not (x1 > x0 and y1 > y0):
        raise TessellationError(f"degenerate bounds {bounds}")
    if not np.isfinite(seeds).all():
        raise TessellationError("seeds must be finite")
    outside = (seeds[:, 0] < x0) | (seeds[:, 0] > x1) | (seeds[:, 1] < y0) | (seeds[:, 1] > y1)
    if outside.any():
        i = int(np.flatnonzero(outside)[0])
        raise TessellationError(f"seed {ids[i]} at {tuple(seeds[i])} lies outside bounds {bounds}")


def voronoi_tessellate(seeds: Sequence, bounds: Sequence[float],
                       ids: Optional[Sequence[int]] = None) -> Tessellation:
    """Voronoi cells of ``seeds`` clipped to ``bounds = (x0, y0, x1, y1)``.

    Each cell starts as the bounds rectangle and is clipped by the bisector of
    each rival seed. Rivals come from a bucket grid sized so a bucket holds
    about one seed on average, visited in rings of increasing distance.
    """
    pts = np.ascontiguousarray(np.asarray(seeds, dtype=float).reshape(-1, 2))
    n = len(pts)
    if n < 1:
        raise TessellationError("need at least one seed")
    ids = np.arange(n) if ids is None else np.asarray(ids)
    if len(ids) != n:
        raise TessellationError("ids and seeds differ in length")
    bounds = tuple(float(b) for b in bounds)
    _validate(pts, bounds, ids)
    x0, y0, x1, y1 = bounds
    cell = max(np.sqrt((x1 - x0) * (y1 - y0) / n), 1e-9)
    verts, counts, di, dj = _tessellate(pts, np.array(bounds), cell, MIN_SEPARATION)
    if di >= 0:
        raise TessellationError(
            f"duplicate seeds {ids[di]} and {ids[dj]} (closer than {MIN_SEPARATION} px)")
    areas = _areas(verts, counts)
    return Tessellation(bounds, ids, pts, areas, verts, counts)
