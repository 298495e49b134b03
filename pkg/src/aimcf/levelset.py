"""Sublevel sets of the flow function and their anisotropic geometry.

E_t = {v < t} and G_t = {v <= t} are read off the grid as cell masks
(with the obstacle cells always included, since v extends by zero there).
Their boundaries are traced by marching squares on the cell-center
lattice with linear edge interpolation; the anisotropic perimeter of a
polyline is the sum of F applied to the rotated segment vectors, which is
exact for polygons because F is 1-homogeneous and absorbs segment length.

Perimeters are always measured on interpolated contours, never on
stair-step mask outlines: the latter overestimate by the anisotropy ratio
of the norm and do not converge under refinement.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import ACTIVE, OMEGA, OUTER, ScalarField
from .imcf import FlowField

__all__ = [
    "Contour", "LevelSetFamily", "PerimeterSeries", "SeriesRow",
    "extract_sublevel", "marching_contour", "anisotropic_perimeter",
    "perimeter_series", "detect_fattening", "outward_min_check",
    "mask_area", "mask_contour", "series_jsonl",
]


def _default_eps(t):
    return 1e-9 * (1.0 + abs(t))


@dataclass
class Contour:
    """Closed polylines (first point repeated last), outward-positive."""
    polylines: list
    level: float = 0.0
    truncated: bool = False

    def __post_init__(self):
        clean = []
        for poly in self.polylines:
            poly = np.asarray(poly, dtype=float)
            if len(poly) < 4:
                continue
            if not np.allclose(poly[0], poly[-1]):
                raise ValueError("contour polylines must be closed")
            seg = np.diff(poly, axis=0)
            keep = np.concatenate([[True], np.any(seg != 0.0, axis=1)])
            poly = poly[keep]
            if len(poly) < 4:
                continue
            if _signed_area(poly) < 0:
                poly = poly[::-1]
            clean.append(poly)
        self.polylines = clean

    def n_vertices(self):
        return sum(len(p) - 1 for p in self.polylines)

    def points(self):
        return np.vstack([p[:-1] for p in self.polylines]) if self.polylines else np.zeros((0, 2))


def _signed_area(poly):
    x, y = poly[:-1, 0], poly[:-1, 1]
    xn, yn = poly[1:, 0], poly[1:, 1]
    return 0.5 * float(np.sum(x * yn - xn * y))


def extract_sublevel(flow, t, closed=False, eps=None):
    """Cell mask of E_t (strict) or G_t (closed, with equality slack eps)."""
    if t < 0:
        raise ValueError("sublevel times are nonnegative")
    v = flow.v if isinstance(flow, FlowField) else flow
    if closed:
        eps = _default_eps(t) if eps is None else eps
        mask = v.values <= t + eps
    else:
        mask = v.values < t
    mask = mask.copy()
    mask[v.mask == OMEGA] = True
    return mask


# --------------------------------------------------------------------------
# marching squares on the cell-center lattice

# segments per case, as pairs of local edge ids: 0 bottom, 1 right, 2 top, 3 left
_CASES = {
    0: [], 15: [],
    1: [(3, 0)], 14: [(0, 3)],
    2: [(0, 1)], 13: [(1, 0)],
    3: [(3, 1)], 12: [(1, 3)],
    4: [(1, 2)], 11: [(2, 1)],
    6: [(0, 2)], 9: [(2, 0)],
    7: [(3, 2)], 8: [(2, 3)],
    # 5 and 10 are the saddles, resolved by the cell-average rule
}


def marching_contour(flow, t):
    """Interpolated contour of {v = t}, closed and consistently oriented.

    Saddle squares connect according to the sign of the cell average.
    Contours reaching the outer Dirichlet band set the truncated flag.
    """
    v = flow.v if isinstance(flow, FlowField) else flow
    vals = v.values
    nx, ny = v.grid.nx, v.grid.ny
    h = v.grid.h
    x0 = v.grid.origin[0] + 0.5 * h
    y0 = v.grid.origin[1] + 0.5 * h

    above = vals >= t
    a00 = above[:-1, :-1]
    a10 = above[1:, :-1]
    a11 = above[1:, 1:]
    a01 = above[:-1, 1:]
    case = (a00.astype(np.int8) + 2 * a10.astype(np.int8)
            + 4 * a11.astype(np.int8) + 8 * a01.astype(np.int8))
    interesting = np.argwhere((case != 0) & (case != 15))

    def edge_key(i, j, local):
        # horizontal edges join (i,j)-(i+1,j); vertical join (i,j)-(i,j+1)
        if local == 0:
            return ("H", i, j)
        if local == 2:
            return ("H", i, j + 1)
        if local == 3:
            return ("V", i, j)
        return ("V", i + 1, j)

    def edge_point(key):
        kind, i, j = key
        va = vals[i, j]
        vb = vals[i + 1, j] if kind == "H" else vals[i, j + 1]
        s = 0.5 if vb == va else (t - va) / (vb - va)
        s = min(max(s, 0.0), 1.0)
        if kind == "H":
            return (x0 + (i + s) * h, y0 + j * h)
        return (x0 + i * h, y0 + (j + s) * h)

    segments = []
    touched_outer = False
    outer = v.mask == OUTER
    for i, j in interesting:
        c = int(case[i, j])
        if c in (5, 10):
            avg = 0.25 * (vals[i, j] + vals[i + 1, j] + vals[i + 1, j + 1] + vals[i, j + 1])
            center_above = avg >= t
            if c == 5:  # corners 00 and 11 above
                segs = [(3, 2), (1, 0)] if center_above else [(3, 0), (1, 2)]
            else:  # corners 10 and 01 above
                segs = [(0, 3), (2, 1)] if center_above else [(0, 1), (2, 3)]
        else:
            segs = _CASES[c]
        if segs and (outer[i, j] or outer[i + 1, j] or outer[i, j + 1] or outer[i + 1, j + 1]):
            touched_outer = True
        for a, b in segs:
            segments.append((edge_key(i, j, a), edge_key(i, j, b)))

    polylines = _stitch(segments, edge_point)
    return Contour(polylines, level=t, truncated=touched_outer)


def _stitch(segments, edge_point):
    """Chain segments into closed loops via exact integer edge keys."""
    nxt = {}
    for a, b in segments:
        nxt.setdefault(a, []).append(b)
    loops = []
    visited = set()
    for start, _ in segments:
        if start in visited:
            continue
        chain = [start]
        visited.add(start)
        cur = start
        while True:
            outs = [k for k in nxt.get(cur, []) if k not in visited or k == start]
            if not outs:
                break
            cur = outs[0]
            if cur == start:
                break
            visited.add(cur)
            chain.append(cur)
        if len(chain) >= 3:
            pts = [edge_point(k) for k in chain]
            pts.append(pts[0])
            loops.append(np.asarray(pts))
    return loops


def anisotropic_perimeter(contour, F):
    """Sum of F over rotated segment vectors: exact for polygonal input.

    The rotation maps the tangent to the outward normal scaled by segment
    length; 1-homogeneity of F absorbs the length factor, and evenness
    makes the result orientation-independent.
    """
    total = 0.0
    for poly in contour.polylines:
        seg = np.diff(poly, axis=0)
        normals = np.column_stack([seg[:, 1], -seg[:, 0]])
        total += float(np.sum(F._eval_cols(normals.T)))
    return total


def mask_area(mask, h):
    return float(np.count_nonzero(mask)) * h * h


def mask_contour(mask, grid):
    """Marching-squares boundary of a cell mask via its 0/1 indicator."""
    ind = ScalarField(grid, values=np.where(mask, 1.0, 0.0))
    return marching_contour(ind, 0.5)


# --------------------------------------------------------------------------
# families and series


@dataclass
class SeriesRow:
    t: float
    P_F_E: float
    P_F_G: float
    rescaled_G: float
    area_E: float
    area_G: float
    flags: list = field(default_factory=list)


@dataclass
class PerimeterSeries:
    rows: list

    def times(self):
        return [r.t for r in self.rows]


@dataclass
class LevelSetFamily:
    times: list
    masks_E: list
    masks_G: list
    contours: list
    series: PerimeterSeries


def perimeter_series(flow, F, times, closed_width=None):
    """Strict and closed perimeters, areas and flags at each time.

    closed_width is the equality slack separating G_t from E_t; it should
    exceed the numerical spread of any flat plateau of v for fattening
    geometry to register (the default is the tiny tie-breaking slack).
    """
    rows = []
    hw = flow.v.grid.h
    for t in sorted(float(t) for t in times):
        w = _default_eps(t) if closed_width is None else closed_width
        flags = []
        cE = marching_contour(flow, t)
        cG = marching_contour(flow, t + w)
        if cE.truncated or cG.truncated:
            flags.append("truncated")
        if flow.R_out is not None:
            mG = extract_sublevel(flow, t, closed=True, eps=w)
            X, Y = flow.v.grid.centers()
            if np.any(F.dual_values(X, Y)[mG] > 0.5 * flow.R_out):
                flags.append("outside_trusted_window")
        pe = anisotropic_perimeter(cE, F)
        pg = anisotropic_perimeter(cG, F)
        ae = mask_area(extract_sublevel(flow, t, closed=False), hw)
        ag = mask_area(extract_sublevel(flow, t, closed=True, eps=w), hw)
        rows.append(SeriesRow(t=t, P_F_E=pe, P_F_G=pg,
                              rescaled_G=np.exp(-t) * pg,
                              area_E=ae, area_G=ag, flags=flags))
    return PerimeterSeries(rows)


def detect_fattening(flow, times, rel_tol=0.02, width=None):
    """Times where the closed sublevel outgrows the strict one in area.

    width sets the closed-side slack; on numerically computed flows it
    must cover the plateau spread left by the finite p-schedule.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    h = flow.v.grid.h
    flagged = []
    for t in sorted(float(t) for t in times):
        w = _default_eps(t) if width is None else width
        aE = mask_area(extract_sublevel(flow, t, closed=False), h)
        aG = mask_area(extract_sublevel(flow, t, closed=True, eps=w), h)
        if aG > 0 and (aG - aE) / aG > rel_tol:
            flagged.append(t)
    return flagged


def level_set_family(flow, F, times, closed_width=None):
    times = sorted(float(t) for t in times)
    masks_E = [extract_sublevel(flow, t, closed=False) for t in times]
    masks_G = [extract_sublevel(flow, t, closed=True,
                                eps=None if closed_width is None else closed_width)
               for t in times]
    for a, b in zip(masks_E, masks_E[1:]):
        if np.any(a & ~b):
            raise ValueError("sublevel masks must be nested")
    contours = [marching_contour(flow, t) for t in times]
    series = perimeter_series(flow, F, times, closed_width=closed_width)
    return LevelSetFamily(times, masks_E, masks_G, contours, series)


# --------------------------------------------------------------------------
# outward minimizing check


def _dilate(mask, k):
    out = mask.copy()
    for _ in range(k):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def _convex_hull_mask(mask, grid):
    from .anisotropy import _convex_hull_2d

    X, Y = grid.centers()
    pts = np.column_stack([X[mask], Y[mask]])
    hull = _convex_hull_2d(pts)
    if len(hull) < 3:
        return mask.copy()
    out = np.ones(mask.shape, dtype=bool)
    n = len(hull)
    for k in range(n):
        a, b = hull[k], hull[(k + 1) % n]
        # inside = left of every CCW edge, with half-cell slack
        out &= ((b[0] - a[0]) * (Y - a[1]) - (b[1] - a[1]) * (X - a[0])) >= -1e-12
    return out | mask


def outward_min_check(mask, flow, F, n_tests=8, seed=0, tol_per=None):
    """Probe outward minimality of a cell mask against a superset family.

    Supersets are cell dilations, the convex hull mask, and unions with
    random Wulff bumps seeded on the boundary. Returns (ok, worst_margin)
    where margin = P_F(superset) - P_F(mask); ok means no superset beats
    the mask's perimeter by more than the stair-step slack tol_per = 4hC.
    """
    grid = flow.v.grid if isinstance(flow, FlowField) else flow.grid
    h = grid.h
    if tol_per is None:
        _, C = F.equivalence_constants()
        tol_per = 4.0 * h * C
    base = anisotropic_perimeter(mask_contour(mask, grid), F)
    outer_band = (flow.v.mask if isinstance(flow, FlowField) else flow.mask) == OUTER
    margins = []

    candidates = []
    for k in (1, 2, 4, 8):
        candidates.append(_dilate(mask, k))
    candidates.append(_convex_hull_mask(mask, grid))
    rng = np.random.default_rng(seed)
    boundary = mask & ~_erode(mask)
    bidx = np.argwhere(boundary)
    X, Y = grid.centers()
    for _ in range(max(n_tests - len(candidates), 0)):
        i, j = bidx[rng.integers(len(bidx))]
        r = rng.uniform(2 * h, 10 * h)
        bump = F.dual_values(X, Y, center=(X[i, j], Y[i, j])) < r
        candidates.append(mask | bump)

    for cand in candidates[:max(n_tests, len(candidates))]:
        if np.any(cand & outer_band):
            continue  # superset escaped the trusted region
        per = anisotropic_perimeter(mask_contour(cand, grid), F)
        margins.append(per - base)
    if not margins:
        raise ValueError("no admissible supersets; mask too close to the outer band")
    worst = float(min(margins))
    return worst >= -tol_per, worst


def _erode(mask):
    out = mask.copy()
    out[1:, :] &= mask[:-1, :]
    out[:-1, :] &= mask[1:, :]
    out[:, 1:] &= mask[:, :-1]
    out[:, :-1] &= mask[:, 1:]
    return out


# --------------------------------------------------------------------------
# JSON lines


def series_jsonl(series, contours=None):
    """One JSON object per time row; polylines included when provided."""
    lines = []
    for k, row in enumerate(series.rows):
        obj = {
            "t": row.t,
            "polylines": [p.tolist() for p in contours[k].polylines] if contours else [],
            "P_F_E": row.P_F_E,
            "P_F_G": row.P_F_G,
            "area_E": row.area_E,
            "area_G": row.area_G,
            "flags": row.flags,
        }
        lines.append(json.dumps(obj, sort_keys=True))
    return lines
