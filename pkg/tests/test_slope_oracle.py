import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfslope.slope_oracle import (
    ANCHOR_CU,
    GeometryError,
    SearchConfigError,
    SearchSpec,
    SlopeGeometry,
    StabilityOracle,
    TrialCircle,
    build_geometry,
    circles_for,
    classify_stability,
    default_search,
    enumerate_circles,
    fos_circle,
    label_for,
    layout_for,
    with_search,
)

TOY = dict(slope_height=1.0, total_depth=2.0, crest_width=1.5, toe_width=1.5, cell_size=1.0)


@pytest.fixture(scope="module")
def oracle():
    return StabilityOracle()


def test_default_grid_has_800_cells():
    geometry, grid = build_geometry()
    assert grid.n_cells == 800
    assert geometry.area == pytest.approx(800 * 0.25)


def test_unit_cells_give_200():
    _, grid = build_geometry(cell_size=1.0)
    assert grid.n_cells == 200


def test_depth_below_height_rejected():
    with pytest.raises(GeometryError):
        build_geometry(total_depth=4.0)


def test_misaligned_widths_rejected():
    with pytest.raises(GeometryError):
        build_geometry(crest_width=11.3)


def test_cells_tile_the_body():
    layout = layout_for(SlopeGeometry())
    polys = layout.cell_polygons()
    areas = np.array([0.5 * abs(np.dot(p[:, 0], np.roll(p[:, 1], -1)) - np.dot(np.roll(p[:, 0], -1), p[:, 1])) for p in polys])
    # mean cell area is one square cell; only the sheared face-zone columns deviate
    assert areas.sum() == pytest.approx(SlopeGeometry().area, rel=1e-12)
    assert areas.mean() == pytest.approx(0.25, rel=1e-12)
    ncols = layout.n_upper_cols
    upper = areas[: layout.n_upper_rows * ncols].reshape(layout.n_upper_rows, ncols)
    assert np.allclose(upper[:, : layout.n_square], 0.25, rtol=1e-12)
    assert np.allclose(areas[layout.n_upper_rows * ncols :], 0.25, rtol=1e-12)


def test_canonical_order_row_major_top_left():
    _, grid = build_geometry()
    c = grid.cell_centers
    assert c[0, 1] == pytest.approx(9.75) and c[0, 0] == pytest.approx(0.25)
    # within the first row x increases, and the last cell is bottom-right
    assert np.all(np.diff(c[:28, 0]) > 0)
    assert c[-1, 1] == pytest.approx(0.25) and c[-1, 0] == pytest.approx(25.75)
    assert np.all(np.diff(c[:, 1]) <= 1e-12)


def test_default_search_extents():
    g = SlopeGeometry()
    s = default_search(g)
    assert (s.x_min, s.x_max) == (g.crest_x - 10, g.toe_x + 10)
    assert (s.y_min, s.y_max) == (10.0, 25.0)


# --- independent oracle for one circle on the toy slope -------------------


def _surface(g, x):
    m = math.tan(math.radians(g.slope_angle))
    return min(max(g.total_depth - (x - g.crest_x) * m, g.toe_y), g.total_depth)


def _crossings(g, xc, yc, r):
    f = lambda x: (x - xc) ** 2 + (_surface(g, x) - yc) ** 2 - r * r
    xs = np.linspace(0, g.domain_width, 40001)
    out = []
    for a, b in zip(xs[:-1], xs[1:]):
        if f(a) == 0:
            out.append(a)
        elif f(a) * f(b) < 0:
            for _ in range(200):
                mid = 0.5 * (a + b)
                if f(a) * f(mid) <= 0:
                    b = mid
                else:
                    a = mid
            out.append(0.5 * (a + b))
    return out


def _inside(poly, x, y):
    n = len(poly)
    hit = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xi:
                hit = not hit
    return hit


def _hand_fos(g, values, xc, yc, r):
    x1, x2 = _crossings(g, xc, yc, r)
    cs = g.cell_size
    drive = 0.0
    nsl = math.ceil((x2 - x1) / cs - 1e-9)
    for j in range(nsl):
        xa = x1 + j * cs
        xb = min(xa + cs, x2)
        xm = 0.5 * (xa + xb)
        h = _surface(g, xm) - (yc - math.sqrt(r * r - (xm - xc) ** 2))
        drive += g.unit_weight * h * (xb - xa) * (xc - xm)
    t1, t2 = math.asin((x1 - xc) / r), math.asin((x2 - xc) / r)
    nseg = math.ceil(r * (t2 - t1) / (cs / 2) - 1e-9)
    polys = layout_for(g).cell_polygons()
    resist = 0.0
    for k in range(nseg):
        t = t1 + (k + 0.5) * (t2 - t1) / nseg
        px, py = xc + r * math.sin(t), yc - r * math.cos(t)
        cell = [i for i, p in enumerate(polys) if _inside(p, px, py)]
        assert len(cell) == 1
        resist += values[cell[0]] * r * (t2 - t1) / nseg
    return r * resist / drive


def test_toy_circle_matches_hand_integration(backend):
    g, grid = build_geometry(**TOY)
    assert grid.n_cells == 6
    values = np.array([10.0, 20.0, 30.0, 40.0, 50.0, 60.0])
    circle = TrialCircle((2.3, 2.6), 1.9)
    got = fos_circle(values, g, circle, calibrated=False)
    assert got == pytest.approx(_hand_fos(g, values, 2.3, 2.6, 1.9), rel=1e-9)


def test_homogeneous_arc_length_is_exact(backend):
    g, _ = build_geometry(**TOY)
    circle = TrialCircle((2.3, 2.6), 1.9)
    f1 = fos_circle(np.ones(6), g, circle, calibrated=False)
    x1, x2 = _crossings(g, 2.3, 2.6, 1.9)
    theta = math.asin((x2 - 2.3) / 1.9) - math.asin((x1 - 2.3) / 1.9)
    ref = _hand_fos(g, np.ones(6), 2.3, 2.6, 1.9)
    assert f1 == pytest.approx(ref, rel=1e-9)
    assert theta > 0


def test_doubling_strength_doubles_fos(backend):
    g = SlopeGeometry()
    circle = TrialCircle((14.0, 14.0), 6.0)
    v = np.full(800, 18.6)
    assert fos_circle(2 * v, g, circle) == pytest.approx(2 * fos_circle(v, g, circle), rel=1e-14)


def test_inadmissible_circle_rejected():
    g = SlopeGeometry()
    with pytest.raises(SearchConfigError):
        fos_circle(np.ones(800), g, TrialCircle((14.0, 14.0), 20.0))  # dips below the base


# --- calibration anchor ----------------------------------------------------


def test_anchor_is_exactly_one(oracle):
    v = oracle.classify(np.full(800, ANCHOR_CU))
    assert v.fos_min == pytest.approx(1.0, abs=1e-12)
    assert v.label == "stable" and not v.failed


def test_linear_ladder(oracle):
    fos, _ = oracle.fos_min(np.full(800, 33.5))
    assert fos == pytest.approx(33.5 / 18.6, abs=1e-12)
    assert abs(fos - 1.801) <= 0.002


def test_half_anchor_fails(oracle):
    assert oracle.classify(np.full(800, 9.3)).failed


def test_label_boundary():
    assert label_for(1.0) == "stable"
    assert label_for(np.nextafter(1.0, 0)) == "failed"


def test_weak_band_fails(oracle):
    g = SlopeGeometry()
    _, grid = build_geometry()
    v = np.full(800, 40.0)
    y = grid.cell_centers[:, 1]
    v[(y > 4.0) & (y < 5.5)] = 0.5
    assert oracle.classify(v).failed
    assert oracle.classify(np.full(800, 40.0)).label == "stable"


@settings(max_examples=5, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 1000))
def test_scale_equivariance(oracle, c, seed):
    v = np.random.default_rng(seed).lognormal(3.0, 0.4, 800)
    a, _ = oracle.fos_min(v)
    b, _ = oracle.fos_min(c * v)
    assert b == pytest.approx(c * a, rel=1e-9)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 1000), st.integers(0, 799), st.floats(0.0, 50.0))
def test_monotone_in_each_cell(oracle, seed, cell, bump):
    v = np.random.default_rng(seed).lognormal(3.0, 0.4, 800)
    a, _ = oracle.fos_min(v)
    v2 = v.copy()
    v2[cell] += bump
    b, _ = oracle.fos_min(v2)
    assert b >= a


def test_refined_search_never_increases_fos(oracle):
    coarse = with_search(oracle, center_step=0.5, radius_step=0.5)
    rng = np.random.default_rng(11)
    for _ in range(5):
        v = rng.lognormal(3.0, 0.5, 800)
        assert oracle.fos_min(v)[0] <= coarse.fos_min(v)[0]


def test_critical_circle_first_in_lexicographic_order(oracle):
    cs = oracle.circles
    keys = list(zip(cs.xc, cs.yc, cs.radius))
    assert keys == sorted(keys)
    v = np.full(800, ANCHOR_CU)
    fos, arg = oracle.fos_min(v)
    from rfslope.slope_oracle import raw_fos_all

    all_f = raw_fos_all(v, cs)
    assert arg == int(np.flatnonzero(all_f == all_f.min())[0])


def test_empty_search_is_config_error():
    g = SlopeGeometry()
    tiny = SearchSpec(x_min=0.0, x_max=0.0, y_min=10.0, y_max=10.0)
    with pytest.raises(SearchConfigError):
        StabilityOracle(g, tiny)


def test_backends_build_identical_circle_sets():
    from rfslope import _accel

    g = SlopeGeometry()
    s = SearchSpec(x_min=8.0, x_max=20.0, y_min=10.0, y_max=18.0, center_step=1.0, radius_step=0.5)
    with _accel.backend("numba"):
        a = enumerate_circles(g, s)
    with _accel.backend("numpy"):
        b = enumerate_circles(g, s)
    assert a.n_circles == b.n_circles > 0
    assert np.array_equal(a.xc, b.xc) and np.array_equal(a.radius, b.radius)
    assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.cells, b.cells)
    assert np.allclose(a.lengths, b.lengths, rtol=1e-12)
    assert np.allclose(a.gain, b.gain, rtol=1e-12)


def test_classify_stability_function():
    g = SlopeGeometry()
    v = classify_stability(np.full(800, 20.0), g)
    assert v.fos_min == pytest.approx(20.0 / 18.6, rel=1e-12)
    assert v.critical_circle.radius > 0
    assert circles_for(g) is circles_for(g)
