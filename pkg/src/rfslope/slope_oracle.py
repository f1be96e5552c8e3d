"""Undrained (phi = 0) circular-arc stability oracle over a heterogeneous strength grid.

Coordinates: x to the right from the left boundary, y up from the rigid base.
The crest plateau sits on the left at y = total_depth, the face descends to the
right at ``slope_angle`` and the toe flat sits at y = total_depth - slope_height.

For a trial circle the factor of safety is

    fos = kappa * R * sum_i Cu(cell_i) * dl_i / sum_j W_j * (xc - xbar_j)

which is linear in the strength field.  Each admissible circle is therefore
reduced once to a sparse row of arc lengths per cell plus a scalar R / M_drive,
and the minimum over circles for any field is a sparse mat-vec.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import _accel
from ._accel import njit
from .randfield import GridSpec

ANCHOR_CU = 18.6

_ALIGN_TOL = 1e-9


class GeometryError(ValueError):
    pass


class SearchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SlopeGeometry:
    """Slope body and its strength grid.

    Widths default to a 800-cell body at 0.5 m cells: 11.5 m crest plateau,
    5 m face run, 9.5 m toe flat, 10 m total depth.
    """

    slope_angle: float = 45.0
    slope_height: float = 5.0
    total_depth: float = 10.0
    crest_width: float = 11.5
    toe_width: float = 9.5
    unit_weight: float = 20.0
    cell_size: float = 0.5

    def __post_init__(self):
        for name in ("slope_height", "total_depth", "unit_weight", "cell_size"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive")
        if not 0 < self.slope_angle < 90:
            raise GeometryError("slope_angle must lie strictly between 0 and 90 degrees")
        if self.crest_width < 0 or self.toe_width < 0:
            raise GeometryError("crest_width and toe_width must be non-negative")
        if self.total_depth < self.slope_height:
            raise GeometryError("total_depth must be at least slope_height")

    @property
    def run(self) -> float:
        return self.slope_height / math.tan(math.radians(self.slope_angle))

    @property
    def domain_width(self) -> float:
        return self.crest_width + self.run + self.toe_width

    @property
    def crest_x(self) -> float:
        return self.crest_width

    @property
    def toe_x(self) -> float:
        return self.crest_width + self.run

    @property
    def toe_y(self) -> float:
        return self.total_depth - self.slope_height

    @property
    def area(self) -> float:
        return self.domain_width * self.total_depth - self.slope_height * (self.run / 2 + self.toe_width)

    def surface_y(self, x):
        x = np.asarray(x, dtype=np.float64)
        m = math.tan(math.radians(self.slope_angle))
        face = self.total_depth - (x - self.crest_x) * m
        return np.clip(face, self.toe_y, self.total_depth)

    def to_dict(self) -> dict:
        return {
            "slope_angle": self.slope_angle,
            "slope_height": self.slope_height,
            "total_depth": self.total_depth,
            "crest_width": self.crest_width,
            "toe_width": self.toe_width,
            "unit_weight": self.unit_weight,
            "cell_size": self.cell_size,
        }


def _whole(value: float, cs: float, what: str) -> int:
    n = value / cs
    k = round(n)
    if abs(n - k) > _ALIGN_TOL * max(1.0, abs(n)):
        raise GeometryError(f"{what} ({value:g} m) must be a whole number of {cs:g} m cells")
    return int(k)


@dataclass(frozen=True)
class GridLayout:
    """Mapped cell layout.

    The upper block (toe level to crest) holds ``n_square`` square columns
    followed by ``n_zone`` sheared columns whose right edge follows the face.
    Square cells have area ``cell_size**2``; sheared cells widen with depth, and
    the mean over all cells is one square cell.  The lower block under the toe
    level is a plain square lattice.  Ordering is row-major from the top-left.
    """

    geometry: SlopeGeometry
    n_upper_rows: int
    n_lower_rows: int
    n_square: int
    n_zone: int
    n_lower_cols: int
    zone_x0: float
    zone_top_width: float

    @property
    def n_upper_cols(self) -> int:
        return self.n_square + self.n_zone

    @property
    def n_cells(self) -> int:
        return self.n_upper_rows * self.n_upper_cols + self.n_lower_rows * self.n_lower_cols

    def params(self) -> np.ndarray:
        g = self.geometry
        return np.array(
            [
                g.total_depth,
                g.slope_height,
                g.cell_size,
                self.zone_x0,
                self.zone_top_width,
                g.run,
                self.n_upper_rows,
                self.n_square,
                self.n_zone,
                self.n_lower_rows,
                self.n_lower_cols,
                g.crest_x,
                g.domain_width,
                math.tan(math.radians(g.slope_angle)),
                g.unit_weight,
            ],
            dtype=np.float64,
        )

    def cell_polygons(self) -> list[np.ndarray]:
        g = self.geometry
        cs = g.cell_size
        polys = []
        for r in range(self.n_upper_rows):
            y_top = g.total_depth - r * cs
            y_bot = y_top - cs
            for c in range(self.n_square):
                polys.append(np.array([[c * cs, y_bot], [(c + 1) * cs, y_bot], [(c + 1) * cs, y_top], [c * cs, y_top]]))
            w_top = self._zone_width(y_top) / self.n_zone if self.n_zone else 0.0
            w_bot = self._zone_width(y_bot) / self.n_zone if self.n_zone else 0.0
            for j in range(self.n_zone):
                x0 = self.zone_x0
                polys.append(
                    np.array(
                        [
                            [x0 + j * w_bot, y_bot],
                            [x0 + (j + 1) * w_bot, y_bot],
                            [x0 + (j + 1) * w_top, y_top],
                            [x0 + j * w_top, y_top],
                        ]
                    )
                )
        for r in range(self.n_lower_rows):
            y_top = g.toe_y - r * cs
            y_bot = y_top - cs
            for c in range(self.n_lower_cols):
                polys.append(np.array([[c * cs, y_bot], [(c + 1) * cs, y_bot], [(c + 1) * cs, y_top], [c * cs, y_top]]))
        return polys

    def _zone_width(self, y: float) -> float:
        g = self.geometry
        return self.zone_top_width + g.run * (g.total_depth - y) / g.slope_height


def _polygon_centroid(p: np.ndarray) -> tuple[float, float, float]:
    x, y = p[:, 0], p[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    a = cross.sum() / 2
    cx = ((x + xn) * cross).sum() / (6 * a)
    cy = ((y + yn) * cross).sum() / (6 * a)
    return cx, cy, a


def layout_for(geometry: SlopeGeometry) -> GridLayout:
    g = geometry
    cs = g.cell_size
    n_upper = _whole(g.slope_height, cs, "slope_height")
    n_lower = _whole(g.total_depth - g.slope_height, cs, "foundation depth below the toe")
    n_lower_cols = _whole(g.domain_width, cs, "domain_width")
    # area of one upper row = cs * (crest_width + run/2): must be whole cells
    n_upper_cols = _whole(g.crest_width + g.run / 2, cs, "crest_width + run/2")
    n_zone = max(1, math.ceil(g.run / cs - _ALIGN_TOL))
    n_zone = min(n_zone, n_upper_cols)
    n_square = n_upper_cols - n_zone
    zone_x0 = n_square * cs
    zone_top = g.crest_width - zone_x0
    if zone_top < -_ALIGN_TOL:
        raise GeometryError("crest plateau too narrow for the sheared face zone")
    layout = GridLayout(g, n_upper, n_lower, n_square, n_zone, n_lower_cols, zone_x0, max(zone_top, 0.0))
    if layout.n_cells == 0:
        raise GeometryError("geometry has no interior cells")
    return layout


def build_geometry(**overrides) -> tuple[SlopeGeometry, GridSpec]:
    geometry = SlopeGeometry(**overrides)
    layout = layout_for(geometry)
    centers = np.array([_polygon_centroid(p)[:2] for p in layout.cell_polygons()])
    return geometry, GridSpec(geometry.cell_size, centers)


@lru_cache(maxsize=16)
def grid_for(geometry: SlopeGeometry) -> GridSpec:
    layout = layout_for(geometry)
    centers = np.array([_polygon_centroid(p)[:2] for p in layout.cell_polygons()])
    return GridSpec(geometry.cell_size, centers)


@dataclass(frozen=True)
class TrialCircle:
    center: tuple[float, float]
    radius: float


@dataclass(frozen=True)
class SearchSpec:
    """Trial-circle grid: centres on a regular lattice, radii swept in steps.

    Radii are ``radius_step * k`` for k = 1, 2, ... up to the centre height
    (the arc may touch but not cross the rigid base).
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    center_step: float = 0.25
    radius_step: float = 0.25

    def __post_init__(self):
        if not (self.center_step > 0 and self.radius_step > 0):
            raise SearchConfigError("search steps must be positive")
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise SearchConfigError("search extents are inverted")

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        nx = int(math.floor((self.x_max - self.x_min) / self.center_step + 1e-9)) + 1
        ny = int(math.floor((self.y_max - self.y_min) / self.center_step + 1e-9)) + 1
        xs = self.x_min + self.center_step * np.arange(nx)
        ys = self.y_min + self.center_step * np.arange(ny)
        return xs, ys

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "x_max": self.x_max,
            "y_min": self.y_min,
            "y_max": self.y_max,
            "center_step": self.center_step,
            "radius_step": self.radius_step,
        }


def default_search(geometry: SlopeGeometry) -> SearchSpec:
    h = geometry.slope_height
    return SearchSpec(
        x_min=geometry.crest_x - 2 * h,
        x_max=geometry.toe_x + 2 * h,
        y_min=geometry.total_depth,
        y_max=geometry.total_depth + 3 * h,
    )


# --------------------------------------------------------------------------
# kernels: parameter vector layout follows GridLayout.params()

_P_D, _P_H, _P_CS, _P_ZX0, _P_ZT, _P_RUN, _P_NU, _P_NSQ, _P_NZ, _P_NL, _P_NLC, _P_CX, _P_W, _P_TAN, _P_GAM = range(15)


@njit
def _cell_at_nb(x, y, p):
    d = p[_P_D]
    h = p[_P_H]
    cs = p[_P_CS]
    nsq = int(p[_P_NSQ])
    nz = int(p[_P_NZ])
    ncols_u = nsq + nz
    nu = int(p[_P_NU])
    if y >= d - h:
        r = int((d - y) / cs)
        if r > nu - 1:
            r = nu - 1
        if r < 0:
            r = 0
        if x < p[_P_ZX0]:
            c = int(x / cs)
            if c < 0:
                c = 0
            if c > nsq - 1:
                c = nsq - 1
        else:
            w = p[_P_ZT] + p[_P_RUN] * (d - y) / h
            j = int((x - p[_P_ZX0]) * nz / w) if w > 0 else nz - 1
            if j < 0:
                j = 0
            if j > nz - 1:
                j = nz - 1
            c = nsq + j
        return r * ncols_u + c
    nl = int(p[_P_NL])
    nlc = int(p[_P_NLC])
    r = int((d - h - y) / cs)
    if r > nl - 1:
        r = nl - 1
    if r < 0:
        r = 0
    c = int(x / cs)
    if c < 0:
        c = 0
    if c > nlc - 1:
        c = nlc - 1
    return nu * ncols_u + r * nlc + c


def _cell_at_np(x, y, p):
    d, h, cs = p[_P_D], p[_P_H], p[_P_CS]
    nsq, nz, nu = int(p[_P_NSQ]), int(p[_P_NZ]), int(p[_P_NU])
    nl, nlc = int(p[_P_NL]), int(p[_P_NLC])
    ncols_u = nsq + nz
    upper = y >= d - h
    r_u = np.clip(((d - y) / cs).astype(np.int64), 0, nu - 1)
    c_sq = np.clip((x / cs).astype(np.int64), 0, max(nsq - 1, 0))
    w = p[_P_ZT] + p[_P_RUN] * (d - y) / h
    with np.errstate(divide="ignore", invalid="ignore"):
        j = np.where(w > 0, ((x - p[_P_ZX0]) * nz / w), nz - 1)
    c_z = nsq + np.clip(j.astype(np.int64), 0, nz - 1)
    c_u = np.where(x < p[_P_ZX0], c_sq, c_z)
    up_idx = r_u * ncols_u + c_u
    r_l = np.clip(((d - h - y) / cs).astype(np.int64), 0, max(nl - 1, 0))
    c_l = np.clip((x / cs).astype(np.int64), 0, nlc - 1)
    lo_idx = nu * ncols_u + r_l * nlc + c_l
    return np.where(upper, up_idx, lo_idx)


@njit
def _surface_nb(x, p):
    y = p[_P_D] - (x - p[_P_CX]) * p[_P_TAN]
    if y > p[_P_D]:
        return p[_P_D]
    lo = p[_P_D] - p[_P_H]
    if y < lo:
        return lo
    return y


@njit
def _intersections_nb(xc, yc, r, p, out):
    """Surface crossings of the circle, sorted by x; returns the count."""
    d = p[_P_D]
    lo = d - p[_P_H]
    cx = p[_P_CX]
    tx = cx + p[_P_RUN]
    wdt = p[_P_W]
    m = p[_P_TAN]
    n = 0
    tol = 1e-9
    # crest segment y = d, x in [0, cx]
    q = r * r - (d - yc) ** 2
    if q >= 0:
        s = np.sqrt(q)
        for xx in (xc - s, xc + s):
            if xx >= -tol and xx <= cx + tol:
                out[n] = xx
                n += 1
    # face: y = d - (x - cx) m
    # (x - xc)^2 + (d + cx m - m x - yc)^2 = r^2
    k = d + cx * m - yc
    qa = 1.0 + m * m
    qb = -2.0 * xc - 2.0 * k * m
    qc = xc * xc + k * k - r * r
    disc = qb * qb - 4.0 * qa * qc
    if disc >= 0:
        s = np.sqrt(disc)
        for xx in ((-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa)):
            if xx >= cx - tol and xx <= tx + tol:
                out[n] = xx
                n += 1
    # toe segment y = lo, x in [tx, wdt]
    q = r * r - (lo - yc) ** 2
    if q >= 0:
        s = np.sqrt(q)
        for xx in (xc - s, xc + s):
            if xx >= tx - tol and xx <= wdt + tol:
                out[n] = xx
                n += 1
    # sort + merge duplicates at segment joints
    for i in range(1, n):
        v = out[i]
        j = i - 1
        while j >= 0 and out[j] > v:
            out[j + 1] = out[j]
            j -= 1
        out[j + 1] = v
    u = 0
    for i in range(n):
        if u == 0 or out[i] - out[u - 1] > 1e-7:
            out[u] = out[i]
            u += 1
    return u


@njit
def _trace_nb(xc, yc, r, p, acc, mark, touched):
    """Arc lengths per cell and the driving moment of one circle.

    Returns (n_touched, drive) or (-1, 0.0) when the circle is inadmissible.
    ``acc``/``mark`` are scratch arrays of size n_cells, reset on exit by the
    caller through ``touched``.
    """
    cs = p[_P_CS]
    wdt = p[_P_W]
    xs = np.empty(8)
    n = _intersections_nb(xc, yc, r, p, xs)
    if n != 2:
        return -1, 0.0
    x1 = xs[0]
    x2 = xs[1]
    if x2 - x1 <= 1e-9 or x1 < -1e-9 or x2 > wdt + 1e-9:
        return -1, 0.0
    # lowest arc point must stay on or above the rigid base
    if x1 <= xc <= x2:
        ymin = yc - r
    else:
        ymin = min(yc - np.sqrt(max(r * r - (x1 - xc) ** 2, 0.0)), yc - np.sqrt(max(r * r - (x2 - xc) ** 2, 0.0)))
    if ymin < -1e-9:
        return -1, 0.0
    # driving moment: slices of width cs, midpoint heights
    gam = p[_P_GAM]
    nsl = int(np.ceil((x2 - x1) / cs - 1e-9))
    drive = 0.0
    for jj in range(nsl):
        xa = x1 + jj * cs
        xb = min(xa + cs, x2)
        xm = 0.5 * (xa + xb)
        ya = yc - np.sqrt(max(r * r - (xm - xc) ** 2, 0.0))
        hgt = _surface_nb(xm, p) - ya
        if hgt > 0:
            drive += gam * hgt * (xb - xa) * (xc - xm)
    if not drive > 0:
        return -1, 0.0
    # arc: angle t with point (xc + r sin t, yc - r cos t)
    t1 = np.arcsin(min(max((x1 - xc) / r, -1.0), 1.0))
    t2 = np.arcsin(min(max((x2 - xc) / r, -1.0), 1.0))
    length = r * (t2 - t1)
    nseg = int(np.ceil(length / (0.5 * cs) - 1e-9))
    if nseg < 1:
        nseg = 1
    dt = (t2 - t1) / nseg
    dl = r * dt
    nt = 0
    for kk in range(nseg):
        t = t1 + (kk + 0.5) * dt
        c = _cell_at_nb(xc + r * np.sin(t), yc - r * np.cos(t), p)
        if mark[c] == 0:
            mark[c] = 1
            touched[nt] = c
            nt += 1
        acc[c] += dl
    return nt, drive


@njit
def _build_circles_nb(xs, ys, rstep, p, n_cells, fill, counts_in, out_xc, out_yc, out_r, out_g, indptr, cells, lens):
    acc = np.zeros(n_cells)
    mark = np.zeros(n_cells, dtype=np.int8)
    touched = np.empty(n_cells, dtype=np.int64)
    ncirc = 0
    nnz = 0
    for ix in range(xs.shape[0]):
        xc = xs[ix]
        for iy in range(ys.shape[0]):
            yc = ys[iy]
            kmax = int(np.floor(yc / rstep + 1e-9))
            for k in range(1, kmax + 1):
                r = rstep * k
                nt, drive = _trace_nb(xc, yc, r, p, acc, mark, touched)
                if nt < 0:
                    continue
                if fill:
                    order = np.sort(touched[:nt])
                    out_xc[ncirc] = xc
                    out_yc[ncirc] = yc
                    out_r[ncirc] = r
                    out_g[ncirc] = r / drive
                    for q in range(nt):
                        cells[nnz + q] = order[q]
                        lens[nnz + q] = acc[order[q]]
                    indptr[ncirc + 1] = nnz + nt
                for q in range(nt):
                    acc[touched[q]] = 0.0
                    mark[touched[q]] = 0
                ncirc += 1
                nnz += nt
    counts_in[0] = ncirc
    counts_in[1] = nnz


def _surface_np(x, p):
    y = p[_P_D] - (x - p[_P_CX]) * p[_P_TAN]
    return np.clip(y, p[_P_D] - p[_P_H], p[_P_D])


def _trace_center_np(xc, yc, radii, p, n_cells):
    """Vectorised tracing of all radii for one centre (numpy backend)."""
    d, h, cs = p[_P_D], p[_P_H], p[_P_CS]
    lo = d - h
    cx, tx, wdt, m = p[_P_CX], p[_P_CX] + p[_P_RUN], p[_P_W], p[_P_TAN]
    tol = 1e-9
    nr = radii.shape[0]
    cand = np.full((nr, 6), np.nan)
    q = radii**2 - (d - yc) ** 2
    s = np.sqrt(np.where(q >= 0, q, np.nan))
    for col, xx in enumerate((xc - s, xc + s)):
        ok = (xx >= -tol) & (xx <= cx + tol)
        cand[:, col] = np.where(ok, xx, np.nan)
    k = d + cx * m - yc
    qa = 1.0 + m * m
    qb = -2.0 * xc - 2.0 * k * m
    qc = xc * xc + k * k - radii**2
    disc = qb * qb - 4.0 * qa * qc
    s = np.sqrt(np.where(disc >= 0, disc, np.nan))
    for col, xx in enumerate(((-qb - s) / (2.0 * qa), (-qb + s) / (2.0 * qa))):
        ok = (xx >= cx - tol) & (xx <= tx + tol)
        cand[:, 2 + col] = np.where(ok, xx, np.nan)
    q = radii**2 - (lo - yc) ** 2
    s = np.sqrt(np.where(q >= 0, q, np.nan))
    for col, xx in enumerate((xc - s, xc + s)):
        ok = (xx >= tx - tol) & (xx <= wdt + tol)
        cand[:, 4 + col] = np.where(ok, xx, np.nan)
    cand = np.sort(cand, axis=1)  # nan last
    valid = ~np.isnan(cand)
    diffs = np.diff(cand, axis=1)
    fresh = np.concatenate([valid[:, :1], valid[:, 1:] & ~(diffs <= 1e-7)], axis=1)
    count = fresh.sum(axis=1)
    keep = count == 2
    x1 = np.full(nr, np.nan)
    x2 = np.full(nr, np.nan)
    for i in np.nonzero(keep)[0]:
        vals = cand[i, fresh[i]]
        x1[i], x2[i] = vals[0], vals[1]
    keep &= (x2 - x1 > 1e-9) & (x1 >= -1e-9) & (x2 <= wdt + 1e-9)
    inside = (x1 <= xc) & (xc <= x2)
    y_end = np.minimum(
        yc - np.sqrt(np.maximum(radii**2 - (x1 - xc) ** 2, 0.0)),
        yc - np.sqrt(np.maximum(radii**2 - (x2 - xc) ** 2, 0.0)),
    )
    ymin = np.where(inside, yc - radii, y_end)
    keep &= ymin >= -1e-9
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return None
    r = radii[idx]
    x1, x2 = x1[idx], x2[idx]
    # slices
    nsl = np.ceil((x2 - x1) / cs - 1e-9).astype(np.int64)
    owner = np.repeat(np.arange(idx.size), nsl)
    starts = np.repeat(np.cumsum(nsl) - nsl, nsl)
    jj = np.arange(owner.size) - starts
    xa = x1[owner] + jj * cs
    xb = np.minimum(xa + cs, x2[owner])
    xm = 0.5 * (xa + xb)
    ya = yc - np.sqrt(np.maximum(r[owner] ** 2 - (xm - xc) ** 2, 0.0))
    hgt = _surface_np(xm, p) - ya
    contrib = np.where(hgt > 0, p[_P_GAM] * hgt * (xb - xa) * (xc - xm), 0.0)
    drive = np.zeros(idx.size)
    # sequential accumulation in slice order
    np.add.at(drive, owner, contrib)
    ok = drive > 0
    # arc
    t1 = np.arcsin(np.clip((x1 - xc) / r, -1.0, 1.0))
    t2 = np.arcsin(np.clip((x2 - xc) / r, -1.0, 1.0))
    length = r * (t2 - t1)
    nseg = np.maximum(np.ceil(length / (0.5 * cs) - 1e-9).astype(np.int64), 1)
    dt = (t2 - t1) / nseg
    owner = np.repeat(np.arange(idx.size), nseg)
    starts = np.repeat(np.cumsum(nseg) - nseg, nseg)
    kk = np.arange(owner.size) - starts
    t = t1[owner] + (kk + 0.5) * dt[owner]
    cell = _cell_at_np(xc + r[owner] * np.sin(t), yc - r[owner] * np.cos(t), p)
    dl = r[owner] * dt[owner]
    key = owner * n_cells + cell
    uniq, inv = np.unique(key, return_inverse=True)
    sums = np.zeros(uniq.size)
    np.add.at(sums, inv, dl)
    circ = uniq // n_cells
    cells = uniq % n_cells
    sel = ok[circ]
    nnz_per = np.bincount(circ[sel], minlength=idx.size)[ok]
    return r[ok], (r / np.where(ok, drive, 1.0))[ok], nnz_per, cells[sel], sums[sel]


@dataclass(frozen=True)
class CircleSet:
    """Admissible trial circles reduced to sparse arc-length rows.

    ``fos_raw[k] = gain[k] * sum(lengths[row k] * Cu[cells[row k]])`` with
    ``gain = R / M_drive``.  Circles are ordered lexicographically by
    (center_x, center_y, radius).
    """

    xc: np.ndarray = field(repr=False)
    yc: np.ndarray = field(repr=False)
    radius: np.ndarray = field(repr=False)
    gain: np.ndarray = field(repr=False)
    indptr: np.ndarray = field(repr=False)
    cells: np.ndarray = field(repr=False)
    lengths: np.ndarray = field(repr=False)

    @property
    def n_circles(self) -> int:
        return self.xc.shape[0]

    def circle(self, k: int) -> TrialCircle:
        return TrialCircle((float(self.xc[k]), float(self.yc[k])), float(self.radius[k]))


def _circles_numba(layout: GridLayout, xs, ys, rstep) -> CircleSet:
    p = layout.params()
    n = layout.n_cells
    counts = np.zeros(2, dtype=np.int64)
    e_f = np.empty(0)
    e_i = np.zeros(1, dtype=np.int64)
    _build_circles_nb(xs, ys, rstep, p, n, False, counts, e_f, e_f, e_f, e_f, e_i, np.empty(0, dtype=np.int64), e_f)
    nc, nnz = int(counts[0]), int(counts[1])
    out = [np.empty(nc) for _ in range(4)]
    indptr = np.zeros(nc + 1, dtype=np.int64)
    cells = np.empty(nnz, dtype=np.int64)
    lens = np.empty(nnz)
    _build_circles_nb(xs, ys, rstep, p, n, True, counts, *out, indptr, cells, lens)
    return CircleSet(out[0], out[1], out[2], out[3], indptr, cells.astype(np.int32), lens)


def _circles_numpy(layout: GridLayout, xs, ys, rstep) -> CircleSet:
    p = layout.params()
    n = layout.n_cells
    parts_xc, parts_yc, parts_r, parts_g, parts_n, parts_c, parts_l = [], [], [], [], [], [], []
    for xc in xs:
        for yc in ys:
            kmax = int(math.floor(yc / rstep + 1e-9))
            if kmax < 1:
                continue
            radii = rstep * np.arange(1, kmax + 1)
            res = _trace_center_np(float(xc), float(yc), radii, p, n)
            if res is None:
                continue
            r, g, nnz, cells, lens = res
            parts_xc.append(np.full(r.size, xc))
            parts_yc.append(np.full(r.size, yc))
            parts_r.append(r)
            parts_g.append(g)
            parts_n.append(nnz)
            parts_c.append(cells)
            parts_l.append(lens)
    if not parts_r:
        empty = np.empty(0)
        return CircleSet(empty, empty, empty, empty, np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int32), empty)
    nnz = np.concatenate(parts_n)
    indptr = np.concatenate([[0], np.cumsum(nnz)]).astype(np.int64)
    return CircleSet(
        np.concatenate(parts_xc),
        np.concatenate(parts_yc),
        np.concatenate(parts_r),
        np.concatenate(parts_g),
        indptr,
        np.concatenate(parts_c).astype(np.int32),
        np.concatenate(parts_l),
    )


def enumerate_circles(geometry: SlopeGeometry, search: SearchSpec) -> CircleSet:
    layout = layout_for(geometry)
    xs, ys = search.centers()
    if _accel.use_numba():
        return _circles_numba(layout, xs, ys, float(search.radius_step))
    return _circles_numpy(layout, xs, ys, float(search.radius_step))


def trace_circle(geometry: SlopeGeometry, circle: TrialCircle) -> CircleSet:
    """Single-circle :class:`CircleSet` (empty when the circle is inadmissible)."""
    layout = layout_for(geometry)
    xc, yc = circle.center
    p = layout.params()
    n = layout.n_cells
    if _accel.use_numba():
        acc = np.zeros(n)
        mark = np.zeros(n, dtype=np.int8)
        touched = np.empty(n, dtype=np.int64)
        nt, drive = _trace_nb(float(xc), float(yc), float(circle.radius), p, acc, mark, touched)
        if nt < 0:
            empty = np.empty(0)
            return CircleSet(empty, empty, empty, empty, np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int32), empty)
        order = np.sort(touched[:nt])
        return CircleSet(
            np.array([xc], dtype=float),
            np.array([yc], dtype=float),
            np.array([circle.radius], dtype=float),
            np.array([circle.radius / drive]),
            np.array([0, nt], dtype=np.int64),
            order.astype(np.int32),
            acc[order].copy(),
        )
    res = _trace_center_np(float(xc), float(yc), np.array([float(circle.radius)]), p, n)
    if res is None or res[0].size == 0:
        empty = np.empty(0)
        return CircleSet(empty, empty, empty, empty, np.zeros(1, dtype=np.int64), np.empty(0, dtype=np.int32), empty)
    r, g, nnz, cells, lens = res
    return CircleSet(
        np.array([xc], dtype=float), np.array([yc], dtype=float), r, g,
        np.array([0, nnz[0]], dtype=np.int64), cells.astype(np.int32), lens,
    )


@njit
def _min_fos_nb(values, gain, indptr, cells, lens):
    best = np.inf
    arg = -1
    for k in range(gain.shape[0]):
        s = 0.0
        for q in range(indptr[k], indptr[k + 1]):
            s += lens[q] * values[cells[q]]
        f = gain[k] * s
        if f < best:
            best = f
            arg = k
    return best, arg


@njit
def _all_fos_nb(values, gain, indptr, cells, lens):
    out = np.empty(gain.shape[0])
    for k in range(gain.shape[0]):
        s = 0.0
        for q in range(indptr[k], indptr[k + 1]):
            s += lens[q] * values[cells[q]]
        out[k] = gain[k] * s
    return out


def _all_fos_np(values, cs: CircleSet):
    prod = cs.lengths * values[cs.cells]
    sums = np.add.reduceat(prod, cs.indptr[:-1]) if prod.size else np.zeros(cs.n_circles)
    # reduceat returns prod[i] for empty rows; no row is empty by construction
    return cs.gain * sums


def raw_fos_all(values: np.ndarray, circles: CircleSet) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    if _accel.use_numba():
        return _all_fos_nb(values, circles.gain, circles.indptr, circles.cells, circles.lengths)
    return _all_fos_np(values, circles)


def raw_fos_min(values: np.ndarray, circles: CircleSet) -> tuple[float, int]:
    """Minimum raw factor and the index of the first circle attaining it."""
    if circles.n_circles == 0:
        raise SearchConfigError("no admissible trial circle in the search set")
    values = np.ascontiguousarray(values, dtype=np.float64)
    if _accel.use_numba():
        best, arg = _min_fos_nb(values, circles.gain, circles.indptr, circles.cells, circles.lengths)
        return float(best), int(arg)
    f = _all_fos_np(values, circles)
    arg = int(np.argmin(f))
    return float(f[arg]), arg


@dataclass(frozen=True)
class StabilityVerdict:
    fos_min: float
    critical_circle: TrialCircle
    label: str

    @property
    def failed(self) -> bool:
        return self.label == "failed"


def label_for(fos: float) -> str:
    return "stable" if fos >= 1.0 else "failed"


_circle_cache: dict = {}


def circles_for(geometry: SlopeGeometry, search: SearchSpec | None = None) -> CircleSet:
    search = search or default_search(geometry)
    key = (geometry, search, _accel.backend_name())
    hit = _circle_cache.get(key)
    if hit is None:
        hit = enumerate_circles(geometry, search)
        if len(_circle_cache) > 8:
            _circle_cache.clear()
        _circle_cache[key] = hit
    return hit


_anchor_cache: dict = {}


def anchor_raw(geometry: SlopeGeometry, anchor_cu: float = ANCHOR_CU) -> float:
    """Minimum raw factor of the homogeneous anchor field under the default search.

    The calibration constant is ``1 / anchor_raw`` so that the anchor strength
    yields a factor of safety of exactly one.
    """
    key = (geometry, anchor_cu, _accel.backend_name())
    hit = _anchor_cache.get(key)
    if hit is None:
        circles = circles_for(geometry, None)
        n = layout_for(geometry).n_cells
        hit, _ = raw_fos_min(np.full(n, float(anchor_cu)), circles)
        _anchor_cache[key] = hit
    return hit


def calibration_constant(geometry: SlopeGeometry) -> float:
    return 1.0 / anchor_raw(geometry)


def _values_of(realization) -> np.ndarray:
    return np.asarray(getattr(realization, "values", realization), dtype=np.float64)


def fos_circle(realization, geometry: SlopeGeometry, circle: TrialCircle, calibrated: bool = True) -> float:
    """Factor of safety of one trial circle.

    ``calibrated=False`` gives the plain moment ratio (calibration constant 1).
    """
    traced = trace_circle(geometry, circle)
    if traced.n_circles == 0:
        raise SearchConfigError(f"inadmissible trial circle {circle}")
    raw = raw_fos_all(_values_of(realization), traced)[0]
    return float(raw / anchor_raw(geometry)) if calibrated else float(raw)


class StabilityOracle:
    """Reusable classifier of realisations for one geometry and search grid."""

    def __init__(self, geometry: SlopeGeometry | None = None, search: SearchSpec | None = None):
        self.geometry = geometry or SlopeGeometry()
        self.search = search or default_search(self.geometry)
        self.circles = circles_for(self.geometry, self.search)
        if self.circles.n_circles == 0:
            raise SearchConfigError("no admissible trial circle in the search set")
        self.anchor = anchor_raw(self.geometry)

    @property
    def n_cells(self) -> int:
        return layout_for(self.geometry).n_cells

    def fos_min(self, values) -> tuple[float, int]:
        values = _values_of(values)
        if values.shape != (self.n_cells,):
            raise ValueError(f"field has {values.shape} values, grid has {self.n_cells} cells")
        raw, arg = raw_fos_min(values, self.circles)
        return raw / self.anchor, arg

    def classify(self, realization) -> StabilityVerdict:
        fos, arg = self.fos_min(realization)
        return StabilityVerdict(fos, self.circles.circle(arg), label_for(fos))


def classify_stability(realization, geometry: SlopeGeometry, search_spec: SearchSpec | None = None) -> StabilityVerdict:
    return StabilityOracle(geometry, search_spec).classify(realization)


def with_search(oracle: StabilityOracle, **changes) -> StabilityOracle:
    return StabilityOracle(oracle.geometry, replace(oracle.search, **changes))
