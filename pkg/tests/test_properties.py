import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from mch_rh import direct_scattering as ds
from mch_rh import pipeline_cli as pc
from mch_rh import reconstruction as rc
from mch_rh import rh_solver as rh
from mch_rh import spectral_geometry as sg

BG = sg.BackgroundPair(1.0, 2.0)
coord = st.floats(-5, 5, allow_nan=False)
index = st.sampled_from([1, 2])


def off_cut(z, j):
    a = 1.0 / BG.level(j)
    return abs(z.imag) > 1e-6 or abs(z.real) > a + 1e-6


@given(coord, coord, index)
def test_branch_root_odd_and_real_symmetric(re, im, j):
    z = complex(re, im)
    assume(off_cut(z, j))
    l = complex(sg.branch_root(j, z, "off", BG))
    assert abs(complex(sg.branch_root(j, -z, "off", BG)) + l) <= 1e-12 * max(1, abs(l))
    assert abs(np.conj(complex(sg.branch_root(j, np.conj(z), "off", BG))) - l) <= 1e-12 * max(1, abs(l))


@given(coord, coord, index)
def test_branch_root_squares(re, im, j):
    z = complex(re, im)
    assume(off_cut(z, j))
    l = complex(sg.branch_root(j, z, "off", BG))
    a = 1.0 / BG.level(j)
    assert abs(l * l - z * z + a * a) <= 1e-12 * max(1, abs(z) ** 2)


@given(st.floats(0.001, 0.999), index)
def test_branch_root_on_cut(u, j):
    x = u / BG.level(j)
    plus = complex(sg.branch_root(j, x, "plus", BG))
    assert plus == complex(sg.branch_root(j, -x, "plus", BG))
    assert np.conj(plus) == -plus


@given(coord, st.floats(-3, 3).filter(lambda v: abs(v) > 1e-9), index)
def test_gauge_determinant(re, im, j):
    H, Hinv = sg.gauge_matrix(j, complex(re, im), "off", BG)
    assert abs(np.linalg.det(H) - 1) < 1e-10
    assert np.abs(H @ Hinv - np.eye(2)).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(0.3, 2.0), st.integers(0, 2**32 - 1))
def test_plemelj_random_smooth_density(small_grid, centre, width, seed):
    g = small_grid
    coef = np.random.default_rng(seed).normal(size=(2, 2))
    h = np.exp(-((g.nodes - centre) / width) ** 2)[:, None, None] * coef
    idx = np.arange(5, g.size, 53)
    pts = g.nodes[idx]
    d = rh.cauchy_boundary(g, h, pts, "plus") - rh.cauchy_boundary(g, h, pts, "minus")
    assert np.abs(d - h[idx]).max() < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=2.0), st.floats(-5, 5), st.floats(0, 1),
       st.sampled_from(["right", "left"]), st.sampled_from([sg.SIGMA1, sg.SIGMA0]),
       st.floats(0.01, 0.99))
def test_jump_factor_determinants(coeff, y, t, side, seg, u):
    lam = (1.0 + 5 * u) if seg == sg.SIGMA1 else (0.5 + 0.5 * u)
    if seg == sg.SIGMA0:
        coeff = coeff / max(1e-3, abs(coeff)) if abs(coeff) > 0 else 1.0
    wp, wm = rh.jump_factors(BG, np.array([lam]), np.array([seg]), np.array([coeff]), y, t, side)
    assert abs(np.linalg.det(np.eye(2) + wp[0]) - 1) < 1e-12
    assert abs(np.linalg.det(np.eye(2) - wm[0]) - 1) < 1e-12


@given(st.floats(0.05, 20), st.floats(-5, 5), st.floats(-5, 5))
def test_zero_form_recovered(c1, c2, c3):
    lam = 1j * np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    z = rh.fit_zero_expansion(lam, rh.zero_form(c1, c2, c3, lam))
    assert z.c1 == pytest.approx(c1, rel=1e-9)
    assert abs(z.c2 - c2) < 1e-7 * max(1, c1, 1 / c1) and abs(z.c3 - c3) < 1e-7 * max(1, c1, 1 / c1)


finite = st.floats(allow_nan=False, allow_infinity=False, width=64, min_value=-1e300, max_value=1e300)


@given(st.lists(st.tuples(*[finite] * len(rc.FIELD_COLUMNS)), max_size=8))
def test_field_line_csv_round_trip(rows):
    text = ",".join(rc.FIELD_COLUMNS) + "\n" + "".join(
        ",".join(format(v, ".17g") for v in r) + "\n" for r in rows)
    line = rc.FieldLine.from_csv_text(text, 0.25, "right")
    assert line.to_csv_text() == text
    for p, r in zip(line.points, rows):
        assert p.row() == r


@given(st.lists(st.tuples(st.sampled_from([ds.SIGMA1, ds.SIGMA0]), finite,
                          finite.filter(lambda v: v != 0), finite, finite), min_size=1, max_size=6))
def test_table_csv_round_trip(rows):
    lam = np.array([r[1] for r in rows])
    seg = np.array([r[0] for r in rows], dtype=str)
    c11 = np.array([complex(r[2], 0.5) for r in rows])
    c21 = np.array([complex(r[3], r[4]) for r in rows])
    table = ds.ScatteringTable(BG, 1.0, lam, seg, c11, c21)
    back = ds.ScatteringTable.from_csv_text(table.to_csv_text(), BG, 1.0)
    assert np.array_equal(back.c11, c11) and np.array_equal(back.c21, c21)
    assert np.array_equal(back.lam, lam) and list(back.segments) == list(seg)


@given(st.sampled_from(["bg.A1", "bg.A2", "datum.kappa", "contour.R", "y_grid.step",
                        "residuals.h_y", "solver.cond_limit"]),
       st.one_of(st.floats(max_value=0.0), st.just(float("nan")), st.text(max_size=3)))
def test_invalid_config_names_field(path, value):
    section, key = path.split(".")
    with pytest.raises(pc.ConfigError, match=path.replace(".", r"\.")):
        pc.validate({section: {key: value}})


@given(st.floats(-20, 20), st.floats(0.1, 2.0), st.integers(1, 40))
def test_uniform_grid_endpoints(start, step, n):
    stop = start + n * step
    ys = pc.uniform_grid(start, stop, step, "g")
    assert len(ys) == n + 1
    assert math.isclose(ys[0], start, abs_tol=1e-11) and math.isclose(ys[-1], stop, abs_tol=1e-9)
