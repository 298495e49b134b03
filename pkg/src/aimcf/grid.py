"""Uniform cell-centered discretization of a truncated exterior domain.

The computational region is the band between a bounded open set Omega
(a union of shape primitives) and the outer Wulff shape W_Rout of the run
anisotropy. Cells are labeled by where their centers fall:

- OMEGA: center in the closure of Omega (inner Dirichlet data lives here)
- OUTER: center outside W_Rout (outer Dirichlet data lives here)
- ACTIVE: the unknowns, in the truncated exterior band

Alongside the mask, grid construction records the inner and outer Wulff
radii r1 <= r2 with W_r1(center) inside Omega and Omega inside W_r2(0),
found by bisection on containment sampling. Those radii parameterize the
closed-form barrier profiles that bracket the capacitary potential.
"""

from __future__ import annotations

import io
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .anisotropy import Anisotropy

__all__ = [
    "OMEGA", "ACTIVE", "OUTER",
    "DomainError", "FieldFormatError",
    "WulffShape", "AxisRectangle", "Polygon", "DomainSpec",
    "Grid2", "ScalarField", "build_grid",
    "dump_field", "load_field", "write_field_file", "read_field_file",
]

OMEGA, ACTIVE, OUTER = 0, 1, 2
_MASK_CHARS = {OMEGA: "O", ACTIVE: "A", OUTER: "X"}
_CHAR_MASK = {v: k for k, v in _MASK_CHARS.items()}


class DomainError(ValueError):
    """Domain/grid configuration is unusable."""


class FieldFormatError(ValueError):
    """Malformed AIMCF-FIELD data."""


# --------------------------------------------------------------------------
# shape primitives


@dataclass(frozen=True)
class WulffShape:
    """Open Wulff ball {F_ref0(x - center) < r} of a reference anisotropy."""
    F_ref: Anisotropy
    center: tuple
    r: float

    def __post_init__(self):
        if self.r <= 0:
            raise DomainError("Wulff shape radius must be positive")

    def contains(self, X, Y):
        return self.F_ref.dual_values(X, Y, center=self.center) <= self.r

    def boundary_points(self, n=256):
        return self.F_ref.wulff_polygon(self.center, self.r, n)

    def interior_point(self):
        return np.asarray(self.center, dtype=float)


@dataclass(frozen=True)
class AxisRectangle:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmin < self.xmax and self.ymin < self.ymax):
            raise DomainError("rectangle must have positive extent")

    def contains(self, X, Y):
        return ((X >= self.xmin) & (X <= self.xmax)
                & (Y >= self.ymin) & (Y <= self.ymax))

    def boundary_points(self, n=256):
        xs = np.linspace(self.xmin, self.xmax, max(n // 4, 2))
        ys = np.linspace(self.ymin, self.ymax, max(n // 4, 2))
        top = np.column_stack([xs, np.full_like(xs, self.ymax)])
        bot = np.column_stack([xs, np.full_like(xs, self.ymin)])
        lef = np.column_stack([np.full_like(ys, self.xmin), ys])
        rig = np.column_stack([np.full_like(ys, self.xmax), ys])
        return np.vstack([top, bot, lef, rig])

    def interior_point(self):
        return np.array([(self.xmin + self.xmax) / 2, (self.ymin + self.ymax) / 2])


@dataclass(frozen=True)
class Polygon:
    vertices: tuple

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
            raise DomainError("polygon needs at least 3 planar vertices")
        if not _is_simple(verts):
            raise DomainError("polygon is self-intersecting")
        object.__setattr__(self, "vertices", tuple(map(tuple, verts)))

    def contains(self, X, Y):
        verts = np.asarray(self.vertices)
        inside = np.zeros(np.shape(X), dtype=bool)
        n = len(verts)
        for k in range(n):
            x1, y1 = verts[k]
            x2, y2 = verts[(k + 1) % n]
            crosses = (y1 > Y) != (y2 > Y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (Y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (X < xint)
        return inside

    def boundary_points(self, n=256):
        verts = np.asarray(self.vertices)
        pts = [verts]
        per_edge = max(n // len(verts), 2)
        for k in range(len(verts)):
            a, b = verts[k], verts[(k + 1) % len(verts)]
            t = np.linspace(0, 1, per_edge, endpoint=False)[1:]
            pts.append(a + t[:, None] * (b - a))
        return np.vstack(pts)

    def interior_point(self):
        return np.asarray(self.vertices).mean(axis=0)


def _is_simple(verts):
    n = len(verts)

    def cross2(a, b):
        return a[0] * b[1] - a[1] * b[0]

    def seg_intersect(p1, p2, p3, p4):
        d1 = cross2(p4 - p3, p1 - p3)
        d2 = cross2(p4 - p3, p2 - p3)
        d3 = cross2(p2 - p1, p3 - p1)
        d4 = cross2(p2 - p1, p4 - p1)
        return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))

    for i in range(n):
        for j in range(i + 1, n):
            if abs(i - j) in (0, 1) or (i == 0 and j == n - 1):
                continue
            if seg_intersect(verts[i], verts[(i + 1) % n],
                             verts[j], verts[(j + 1) % n]):
                return False
    return True


@dataclass(frozen=True)
class DomainSpec:
    """Union of shape primitives forming the bounded open set Omega."""
    shapes: tuple

    def __post_init__(self):
        if not self.shapes:
            raise DomainError("domain needs at least one shape")
        object.__setattr__(self, "shapes", tuple(self.shapes))

    def contains(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        out = np.zeros(np.shape(X), dtype=bool)
        for s in self.shapes:
            out |= s.contains(X, Y)
        return out

    def contains_point(self, p):
        return bool(self.contains(np.array([p[0]]), np.array([p[1]]))[0])

    def boundary_points(self, n=256):
        return np.vstack([s.boundary_points(n) for s in self.shapes])

    def center_candidates(self):
        cands = [np.zeros(2)]
        cands += [s.interior_point() for s in self.shapes]
        return [c for c in cands if self.contains_point(c)]


# --------------------------------------------------------------------------
# grid and fields


@dataclass(frozen=True)
class Grid2:
    nx: int
    ny: int
    origin: tuple
    h: float

    def __post_init__(self):
        if self.nx < 16 or self.ny < 16:
            raise DomainError("grid needs at least 16 cells per axis")
        if self.h <= 0:
            raise DomainError("spacing must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def centers(self):
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def extent(self):
        x0, y0 = self.origin
        return x0, x0 + self.nx * self.h, y0, y0 + self.ny * self.h


class ScalarField:
    """Cell-centered values plus region labels on a Grid2.

    values[i, j] sits at origin + ((i + 1/2) h, (j + 1/2) h). The optional
    r1 / r2 / r1_center attributes carry the barrier radii recorded by
    build_grid; R_out is the truncation radius of the outer band.
    """

    def __init__(self, grid, values=None, mask=None,
                 r1=None, r2=None, r1_center=(0.0, 0.0), R_out=None):
        self.grid = grid
        shape = (grid.nx, grid.ny)
        self.values = np.zeros(shape) if values is None else np.asarray(values, dtype=float)
        self.mask = np.full(shape, ACTIVE, dtype=np.uint8) if mask is None else np.asarray(mask, dtype=np.uint8)
        if self.values.shape != shape or self.mask.shape != shape:
            raise DomainError("field arrays must match the grid shape")
        self.r1 = r1
        self.r2 = r2
        self.r1_center = (float(r1_center[0]), float(r1_center[1]))
        self.R_out = R_out

    def copy(self, values=None):
        return ScalarField(self.grid,
                           self.values.copy() if values is None else values,
                           self.mask.copy(), self.r1, self.r2, self.r1_center,
                           self.R_out)

    def centers(self):
        return self.grid.centers()

    def cell_gradient(self, i, j):
        """Forward-difference gradient at cell (i, j); +x and +y neighbors must exist."""
        if not (0 <= i < self.grid.nx - 1 and 0 <= j < self.grid.ny - 1):
            raise IndexError("cell has no +x/+y neighbors")
        h = self.grid.h
        return np.array([
            (self.values[i + 1, j] - self.values[i, j]) / h,
            (self.values[i, j + 1] - self.values[i, j]) / h,
        ])

    def interpolate(self, p):
        """Bilinear interpolation of cell-center values at point p."""
        x0, x1, y0, y1 = self.grid.extent()
        px, py = float(p[0]), float(p[1])
        if not (x0 <= px <= x1 and y0 <= py <= y1):
            raise DomainError(f"point {p} outside the grid box")
        h = self.grid.h
        qx = np.clip((px - x0) / h - 0.5, 0.0, self.grid.nx - 1.0)
        qy = np.clip((py - y0) / h - 0.5, 0.0, self.grid.ny - 1.0)
        i0 = min(int(qx), self.grid.nx - 2)
        j0 = min(int(qy), self.grid.ny - 2)
        fx, fy = qx - i0, qy - j0
        v = self.values
        return float((1 - fx) * (1 - fy) * v[i0, j0] + fx * (1 - fy) * v[i0 + 1, j0]
                     + (1 - fx) * fy * v[i0, j0 + 1] + fx * fy * v[i0 + 1, j0 + 1])

    def interpolate_many(self, pts):
        return np.array([self.interpolate(p) for p in np.asarray(pts, dtype=float)])

    def count(self, label):
        return int(np.count_nonzero(self.mask == label))


def build_grid(spec, F, R_out, h, bisect_tol=None, box_halfwidth=None):
    """Label a square grid covering W_Rout and record the barrier radii.

    The box is the smallest h-aligned square centered at the origin that
    contains W_Rout plus a two-cell margin, so outer Dirichlet data always
    has cells to live on. Raises DomainError when Omega is empty on the
    grid or not well separated from the outer band (Omega must fit inside
    W_{R_out/2}).
    """
    if R_out <= 0 or h <= 0:
        raise DomainError("R_out and h must be positive")
    # axis half-width of W_1 is max_i F(e_i), the support of the Wulff ball
    half_width = max(F.eval((1.0, 0.0)), F.eval((0.0, 1.0)))
    L = h * int(np.ceil((R_out * half_width + 2 * h) / h))
    if box_halfwidth is not None:
        L = h * int(round(box_halfwidth / h))
        if abs(L - box_halfwidth) > 1e-12 * max(1.0, box_halfwidth):
            raise DomainError("box_halfwidth must be a multiple of h")
        if L < R_out * half_width:
            raise DomainError("box_halfwidth too small to contain the outer band")
    n = int(round(2 * L / h))
    grid = Grid2(n, n, (-L, -L), h)
    X, Y = grid.centers()

    inside = spec.contains(X, Y)
    dual = F.dual_values(X, Y)
    mask = np.full((n, n), ACTIVE, dtype=np.uint8)
    mask[dual >= R_out] = OUTER
    overlap = inside & (dual >= R_out)
    if np.any(overlap):
        raise DomainError("Omega reaches the outer band; increase R_out")
    mask[inside] = OMEGA

    if not np.any(mask == OMEGA):
        raise DomainError("Omega contains no cell centers at this resolution")
    if not np.any(mask == ACTIVE) or not np.any(mask == OUTER):
        raise DomainError("grid lacks active or outer cells; check R_out and h")

    bd = spec.boundary_points(512)
    # inflate a hair so Omega inside W_r2 survives the boundary sampling gap
    r2 = float(np.max(F._eval_dual_cols(bd.T))) * (1 + 1e-4)
    if r2 > 0.5 * R_out:
        raise DomainError(
            f"Omega (outer radius {r2:.4g}) must fit inside W_(R_out/2)={0.5 * R_out:.4g}")

    tol = bisect_tol if bisect_tol is not None else h / 16
    r1, center = _largest_inner_wulff(spec, F, r2, tol)
    if r1 <= 0:
        raise DomainError("no Wulff ball fits inside Omega; domain too thin for barriers")

    fld = ScalarField(grid, mask=mask, r1=r1, r2=r2, r1_center=center, R_out=float(R_out))
    return fld


def _largest_inner_wulff(spec, F, r_cap, tol):
    best_r, best_c = 0.0, (0.0, 0.0)
    for cand in spec.center_candidates():
        lo, hi = 0.0, r_cap * 2.0

        def fits(r):
            # boundary plus interior shells: guards non-convex Omega
            rings = [F.wulff_polygon(cand, s * r, 128) for s in (1.0, 0.75, 0.5, 0.25)]
            pts = np.vstack(rings + [np.asarray(cand)[None, :]])
            return bool(np.all(spec.contains(pts[:, 0], pts[:, 1])))

        if not fits(tol):
            continue
        lo = tol
        while fits(hi) and hi < 1e6:
            lo, hi = hi, hi * 2
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if fits(mid):
                lo = mid
            else:
                hi = mid
        if lo > best_r:
            best_r, best_c = lo, (float(cand[0]), float(cand[1]))
    return best_r, best_c


# --------------------------------------------------------------------------
# AIMCF-FIELD v1 serialization


def dump_field(fld):
    """Serialize to the AIMCF-FIELD v1 text format."""
    out = io.StringIO()
    g = fld.grid
    out.write("AIMCF-FIELD v1\n")
    out.write(f"{g.nx} {g.ny}\n")
    out.write(f"{g.origin[0]!r} {g.origin[1]!r} {g.h!r}\n")
    for j in range(g.ny):
        out.write(",".join(repr(float(v)) for v in fld.values[:, j]))
        out.write("\n")
    for j in range(g.ny):
        out.write("".join(_MASK_CHARS[int(m)] for m in fld.mask[:, j]))
        out.write("\n")
    return out.getvalue()


def load_field(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "AIMCF-FIELD v1":
        raise FieldFormatError("missing AIMCF-FIELD v1 magic line")
    try:
        nx, ny = map(int, lines[1].split())
        x0, y0, h = map(float, lines[2].split())
    except (IndexError, ValueError) as exc:
        raise FieldFormatError(f"bad header: {exc}") from exc
    if len(lines) < 3 + 2 * ny:
        raise FieldFormatError("truncated field dump")
    grid = Grid2(nx, ny, (x0, y0), h)
    values = np.zeros((nx, ny))
    mask = np.zeros((nx, ny), dtype=np.uint8)
    for j in range(ny):
        row = lines[3 + j].split(",")
        if len(row) != nx:
            raise FieldFormatError(f"value row {j} has {len(row)} entries, expected {nx}")
        values[:, j] = [float(s) for s in row]
    for j in range(ny):
        row = lines[3 + ny + j].strip()
        if len(row) != nx:
            raise FieldFormatError(f"mask row {j} has {len(row)} labels, expected {nx}")
        try:
            mask[:, j] = [_CHAR_MASK[ch] for ch in row]
        except KeyError as exc:
            raise FieldFormatError(f"unknown mask label {exc}") from exc
    return ScalarField(grid, values, mask)


def write_field_file(fld, path):
    """Whole-file atomic write (temp file then rename)."""
    path = os.fspath(path)
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".aimcf-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(dump_field(fld))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_field_file(path):
    with open(path, "r") as fh:
        return load_field(fh.read())
