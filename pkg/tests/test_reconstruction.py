import numpy as np
import pytest

from mch_rh import direct_scattering as ds
from mch_rh import reconstruction as rc
from mch_rh import rh_solver as rh
from mch_rh import spectral_geometry as sg

YS = tuple(np.arange(-3.0, 3.01, 0.5))


@pytest.fixture(scope="module")
def model_point(small_grid, bg):
    return rc.solve_point(None, small_grid, 0.0, 0.0, "right").point


@pytest.fixture(scope="module")
def line_t0(small_table, small_grid):
    line, insts = rc.compute_line(small_table, small_grid, YS, 0.0, "right")
    return line


@pytest.fixture(scope="module")
def flat_lines():
    bg = sg.BackgroundPair(2.0, 2.0, allow_equal=True)
    grid = sg.build_contour(bg, R=6.0, order=8, levels=2)
    ys = np.arange(-2.0, 2.01, 0.5)
    right, _ = rc.compute_line(None, grid, ys, 0.3, "right")
    left, _ = rc.compute_line(None, grid, ys, 0.3, "left")
    return bg, right, left


def test_model_fields(model_point, bg):
    p = model_point
    A = bg.A2
    assert (p.a1, p.a2, p.a3) == pytest.approx((1, A / 2, A / 2), abs=1e-8)
    assert p.u_hat == pytest.approx(A, abs=1e-8)
    assert p.v_hat == pytest.approx(0, abs=1e-8)
    assert p.beta == pytest.approx(-A, abs=1e-8)
    assert p.gamma == pytest.approx(A, abs=1e-8)
    assert p.alpha == pytest.approx(-1 / A, abs=1e-8)
    assert p.m_hat == pytest.approx(A, abs=1e-8)


def test_constant_background_compatibility(bg):
    A = bg.A2
    z = rh.ZeroExpansion(1.0, A / 2, A / 2, 0.0)
    n = np.zeros((2, 2), dtype=complex)
    n[0, 1] = n[1, 0] = -1 / (2 * np.sqrt(2) * A)
    inf = rh.InfinityExpansion(n, np.linalg.solve(rh.ZERO_FRAME, n))
    p = rc.fields_from_expansions(z, inf, bg, "right", 0.0, 0.0)
    assert p.beta * 0 - A * (p.alpha * p.beta - 1) == 0.0
    stencil = {off: p for off in rc.STENCIL_OFFSETS}
    res = rc.residuals_at(stencil, bg, "right", 1e-2, 1e-2)
    for key in rc.RESIDUAL_KEYS:
        assert abs(res[key]) < 1e-14


def test_algebraic_identities(line_t0):
    for p in line_t0.points:
        scale = max(1, abs(p.u_hat))
        assert abs(0.5 * (p.gamma - p.beta) - (p.a1 * p.a2 + p.a3 / p.a1)) <= 1e-12 * scale
        assert abs(0.5 * (p.gamma + p.beta) - p.v_hat) <= 1e-12 * scale
        assert p.beta == -2 * p.a2 * p.a1
        assert p.gamma == 2 * p.a3 / p.a1


def test_flat_background_map(flat_lines):
    bg, right, _ = flat_lines
    assert np.abs(right.x - (right.y + 4 * 0.3)).max() < 1e-6
    inv = rc.invert_map(right, bg)
    x = np.linspace(*inv.x_range, 9)
    assert np.abs(inv.u_of_x(x) - 2.0).max() < 1e-6


def test_flat_background_connection(flat_lines):
    bg, right, left = flat_lines
    flat = ds.build_step_datum(bg, 1.0, (-4.0, 4.0))
    rep = rc.left_right_consistency(right, left, bg, flat)
    assert rep["intercept_target"] == 0.0
    assert rep["slope"] == pytest.approx(1.0, abs=1e-6)
    assert abs(rep["intercept"]) < 1e-6


def test_map_is_monotone_and_close_to_identity(line_t0, bg):
    xm = rc.x_map(line_t0, bg)
    assert xm["monotone"]
    # x - y settles toward +inf; toward -inf the slope is A2/A1 instead
    y, x = line_t0.y, line_t0.x
    assert abs((x[-1] - y[-1]) - (x[-2] - y[-2])) < 2e-3
    assert abs((x[1] - x[0]) / (y[1] - y[0]) - bg.A2 / bg.A1) < 1e-4
    assert xm["difference"] <= 10 * xm["quad_error"] + 1e-15


def test_round_trip(line_t0, bg):
    inv = rc.invert_map(line_t0, bg)
    x = np.linspace(*inv.x_range, 100)
    assert inv.round_trip(x) < 1e-12


def test_initial_condition(line_t0, datum):
    gap = rc.initial_condition_gap(line_t0, datum, window=5.0)
    assert gap["sup"] < 1e-4
    inv = rc.invert_map(line_t0, datum.bg)
    x = np.linspace(-1.5, 1.5, 13)
    assert np.abs(inv.u_of_x(x) - datum.u0(x)).max() < 1e-4


def test_plateau_of_model(small_grid, bg):
    line, _ = rc.compute_line(None, small_grid, (4.0, 5.0), 0.2, "right")
    pl = rc.plateau_check(line, bg)
    assert max(pl["a1_dev"], pl["a2_dev"], pl["a3_dev"], pl["u_dev"]) < 1e-7


def test_residual_suite_at_one_point(small_table, small_grid, bg):
    def field_at(y, t):
        return rc.solve_point(small_table, small_grid, y, t, "right", with_certificates=False).point

    rep = rc.residual_suite(field_at, [(0.5, 0.25)], bg, "right")
    first = rep["levels"][0]["max"]
    assert first["alpha_gap"] < 1e-4
    assert first["x_y_rel"] < 1e-3
    for key in rc.RESIDUAL_KEYS:
        assert first[key] < 1e-3
    assert rep["orders"]["evolution"][0] >= 1.7
    assert rep["orders"]["compat_t"][0] >= 1.7


def _fake(y, status):
    z = rh.ZeroExpansion(1.0, 1.0, 1.0, 0.0)
    n = np.zeros((2, 2), dtype=complex)
    n[0, 1] = n[1, 0] = -1 / (4 * np.sqrt(2))
    p = rc.fields_from_expansions(z, rh.InfinityExpansion(n, n), sg.BackgroundPair(1, 2), "right", y, 0.0)
    return rc.Instance(y, 0.0, "right", None if status == "rejected" else p, {}, status, "")


def test_line_stops_at_breakdown():
    insts = [_fake(0.0, "ok"), _fake(1.0, "ok"), _fake(2.0, "breakdown"), _fake(3.0, "ok")]
    line = rc.assemble_line(insts, 0.0, "right")
    assert [p.y for p in line.points] == [0.0, 1.0]
    assert line.flags == [{"y": 2.0, "flag": "breakdown"}]


def test_contiguous_window():
    insts = [_fake(y, "rejected" if y == 2.0 else "ok") for y in (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)]
    line = rc.assemble_line(insts, 0.0, "right")
    assert [p.y for p in rc.contiguous(line).points] == [3.0, 4.0, 5.0]


def test_non_monotone_line_refused(line_t0, bg):
    pts = list(line_t0.points)
    pts[3], pts[4] = pts[4], pts[3]
    with pytest.raises(rc.ReconstructionError):
        rc.invert_map(rc.FieldLine(0.0, "right", pts), bg)


def test_line_csv_round_trip(line_t0):
    text = line_t0.to_csv_text()
    back = rc.FieldLine.from_csv_text(text, 0.0, "right")
    assert back.to_csv_text() == text


def test_corrupted_line_names_row(line_t0):
    rows = line_t0.to_csv_text().splitlines()
    rows[4] = rows[4].replace(rows[4].split(",")[3], "nan?", 1)
    with pytest.raises(rc.LineFormatError, match="row 5"):
        rc.FieldLine.from_csv_text("\n".join(rows), 0.0, "right")
