import numpy as np
import pytest

from mch_rh import reconstruction as rc
from mch_rh import rh_solver as rh
from mch_rh import spectral_geometry as sg

# a1 at (y, t) = (0, 0), right problem, from a finer grid (2192 nodes, 4 panels per unit, 6 levels)
A1_REFINED = 1.127838485559711


@pytest.fixture(scope="module")
def model_sol(small_grid):
    return rh.solve_instance(rh.build_jump(None, small_grid, 0.0, 0.0, "right"))


@pytest.fixture(scope="module")
def tanh_sol(small_table, small_grid):
    return rh.solve_instance(rh.build_jump(small_table, small_grid, 0.0, 0.0, "right"))


@pytest.fixture(scope="module")
def tanh_sol_left(small_table, small_grid):
    return rh.solve_instance(rh.build_jump(small_table, small_grid, 1.0, 0.25, "left"))


def _probes(n=20, seed=3):
    rng = np.random.default_rng(seed)
    return rng.uniform(-3, 3, n) + 1j * rng.uniform(0.05, 2, n) * rng.choice([-1, 1], n)


def test_zero_reflection_jump_factors(small_grid):
    jump = rh.build_jump(None, small_grid, 0.3, 0.1, "right")
    g2 = small_grid.segments == sg.GAMMA2
    assert np.all(jump.wplus[~g2] == 0) and np.all(jump.wminus == 0)
    # I + w_plus on Gamma2 is the constant jump -i sigma1
    assert np.allclose(jump.wplus[g2] + np.eye(2), -1j * rh.SIGMA_1)


@pytest.mark.parametrize("side, y, t", [("right", 0.5, 0.2), ("left", -1.0, 0.3), ("left", 2.0, 0.0)])
def test_factor_determinants(small_table, small_grid, side, y, t):
    jump = rh.build_jump(small_table, small_grid, y, t, side)
    assert np.abs(np.linalg.det(np.eye(2) + jump.wplus) - 1).max() < 1e-12
    assert np.abs(np.linalg.det(np.eye(2) - jump.wminus) - 1).max() < 1e-12


@pytest.mark.parametrize("side", ["right", "left"])
def test_factorized_jump_matches_closed_form(small_table, small_grid, side):
    g = small_grid
    keep = g.segments != sg.GAMMA2
    lam, seg = g.nodes[keep][::5], g.segments[keep][::5]
    coeff = small_table.coefficient(side)[keep][::5]
    G = rh.jump_matrix(*rh.jump_factors(g.bg, lam, seg, coeff, 0.4, 0.2, side))
    D = rh.jump_matrix_direct(g.bg, lam, seg, coeff, 0.4, 0.2, side)
    assert np.abs(G - D).max() < 1e-12
    s1 = seg == sg.SIGMA1
    assert np.abs(np.linalg.det(G[s1]) - 1).max() < 1e-12


def test_table_must_match_grid(small_table, bg):
    other = sg.build_contour(bg, R=8.0, order=8, levels=2)
    with pytest.raises(sg.ConfigurationError):
        rh.build_jump(small_table, other, 0.0, 0.0, "right")


def test_left_overflow_rejected(small_table, small_grid):
    with pytest.raises(rh.NumericalError, match="overflow"):
        rh.build_jump(small_table, small_grid, 2000.0, 0.0, "left")


def test_segment_cauchy_oracle(small_grid):
    g = small_grid
    dens = np.where((g.nodes > 2) & (g.nodes < 3), 1.0, 0.0)[:, None, None] * np.eye(2)
    val = rh.cauchy_apply(g, dens, np.array([1j]))[0, 0, 0]
    # 50-digit log antiderivative
    assert abs(val - (0.022583617650433273 - 0.0551589000381629j)) < 1e-8
    assert abs(rh.segment_log_cauchy(2.0, 3.0, 1j) - val) < 1e-8


def test_cauchy_zero_and_linearity(small_grid):
    g = small_grid
    rng = np.random.default_rng(1)
    h1 = np.exp(-g.nodes**2)[:, None, None] * rng.normal(size=(1, 2, 2))
    h2 = np.cos(g.nodes)[:, None, None] * np.exp(-np.abs(g.nodes))[:, None, None] * np.eye(2)
    lam = np.array([0.3 + 0.4j, -2 - 1j])
    assert np.all(rh.cauchy_apply(g, np.zeros((g.size, 2, 2)), lam) == 0)
    lhs = rh.cauchy_apply(g, 2.5 * h1 + h2, lam)
    rhs = 2.5 * rh.cauchy_apply(g, h1, lam) + rh.cauchy_apply(g, h2, lam)
    assert np.abs(lhs - rhs).max() < 1e-13


def test_plemelj_jump(small_grid):
    g = small_grid
    h = (np.exp(-g.nodes**2) * (1 + 0.3 * g.nodes))[:, None, None] * np.eye(2)
    idx = np.arange(3, g.size, 37)
    pts = g.nodes[idx]
    diff = rh.cauchy_boundary(g, h, pts, "plus") - rh.cauchy_boundary(g, h, pts, "minus")
    assert np.abs(diff - h[idx]).max() < 1e-8


def test_boundary_log_values(small_grid):
    from mch_rh import model_oracles as mo
    g = small_grid
    dens = np.where((g.nodes > 2) & (g.nodes < 3), 1.0, 0.0)[:, None, None] * np.eye(2)
    x = 2.3
    for side in ("plus", "minus"):
        val = rh.cauchy_boundary(g, dens, np.array([x]), side)[0, 0, 0]
        assert abs(val - complex(mo.segment_log_boundary_hp(2.0, 3.0, x, side))) < 1e-8


def test_mirror_relabelling(small_grid):
    g = small_grid
    h = np.exp(-(g.nodes - 0.4) ** 2)[:, None, None] * np.eye(2)
    hm = h[::-1]
    lam = np.array([0.7 + 0.3j])
    a = rh.cauchy_apply(g, h, lam)
    b = rh.cauchy_apply(g, hm, -lam)
    # C[h(-.)](-lam) = -C[h](lam) on a symmetric grid
    assert np.abs(a + b).max() < 1e-12


def test_zero_jump_gives_identity(small_grid):
    z = np.zeros((small_grid.size, 2, 2), dtype=complex)
    sol = rh.solve_instance(rh.JumpData(small_grid, "right", 0.0, 0.0, z, z, None))
    assert np.all(sol.mu == np.eye(2))
    inf = rh.expand_at_infinity(sol)
    assert np.all(inf.N1 == 0)


def test_model_problem(model_sol, bg):
    lam = _probes()
    assert np.abs(rh.evaluate_N(model_sol, lam) - rh.model_solution(bg, lam)).max() < 1e-8
    assert model_sol.residual < 1e-10 and model_sol.residual_full < 1e-10
    assert rh.expand_at_zero(model_sol).as_tuple() == pytest.approx((1.0, 1.0, 1.0), abs=1e-8)
    inf = rh.expand_at_infinity(model_sol)
    assert -inf.alpha == pytest.approx(1 / bg.A2, abs=1e-8)


def test_normalization_at_infinity(tanh_sol):
    assert np.abs(rh.evaluate_N(tanh_sol, np.array([1e6j]))[0] - np.eye(2)).max() < 1e-4


@pytest.mark.parametrize("which", ["tanh_sol", "tanh_sol_left"])
def test_certificates(which, request):
    sol = request.getfixturevalue(which)
    lam = _probes()
    assert np.abs(np.linalg.det(rh.evaluate_N(sol, lam)) - 1).max() < 1e-8
    assert rh.jump_residual(sol) < 1e-6
    assert sol.residual < 1e-10
    certs = rc.certificates(sol)
    assert certs["sigma2_symmetry"] < 1e-6
    assert certs["schwarz_symmetry"] < 1e-6


def test_infinity_coefficients_are_real(tanh_sol):
    n = rh.expand_at_infinity(tanh_sol).n
    for v in (n[0, 1], n[1, 0]):
        assert abs(v.imag) <= 1e-8 * abs(v) + 1e-12


def test_zero_expansion_self_convergence(tanh_sol):
    z = rh.expand_at_zero(tanh_sol)
    assert z.c1 == pytest.approx(A1_REFINED, abs=1e-5)
    assert z.misfit < 1e-8


def test_axis_extraction_cross_check(tanh_sol):
    a = rh.expand_at_zero(tanh_sol, method="circle").as_tuple()
    b = rh.expand_at_zero(tanh_sol, method="axis").as_tuple()
    # the axis fit loses digits in the linear coefficients
    assert abs(a[0] - b[0]) < 1e-8
    assert np.abs(np.subtract(a[1:], b[1:])).max() < 1e-5


def test_zero_expansion_small_leading_coefficient(tanh_sol_left):
    # the left problem at t > 0 has a1 < 1 in part of the line
    z = rh.expand_at_zero(tanh_sol_left)
    assert 0 < z.c1 and z.misfit < 1e-8


def test_symmetry_violation_is_flagged():
    lam = 1j * np.array([1e-2, 5e-3, 2.5e-3, 1.25e-3])
    good = rh.zero_form(1.3, 0.7, 0.9, lam)
    z = rh.fit_zero_expansion(lam, good)
    assert z.as_tuple() == pytest.approx((1.3, 0.7, 0.9), abs=1e-9)
    bad = good.copy()
    bad[:, 0, 1] += 1e-3
    with pytest.raises(rh.ExtractionError):
        rh.fit_zero_expansion(lam, bad)


def test_model_solution_values(bg):
    M = rh.model_solution(bg, np.array([1j]))[0]
    assert M[0, 0] == pytest.approx(0.9732489894677302, abs=1e-15)
    assert M[0, 1] == pytest.approx(-0.22975292054736118j, abs=1e-15)
    assert np.abs(rh.model_solution(bg, np.array([1e9j]))[0] - np.eye(2)).max() < 1e-9


def test_model_solution_jump(bg, small_grid):
    x = small_grid.nodes[small_grid.segments == sg.GAMMA2]
    Mp = rh.model_solution(bg, x, "plus")
    Mm = rh.model_solution(bg, x, "minus")
    assert np.abs(Mp - Mm @ rh.GAMMA2_JUMP).max() < 1e-10


def test_conditioning_guard(small_table, small_grid):
    with pytest.raises(rh.NumericalError, match="ill-conditioned"):
        rh.solve_instance(rh.build_jump(small_table, small_grid, 0.0, 0.0, "right"), cond_limit=1.0)


def test_operator_norm_inequality(small_table, small_grid):
    rep = rh.operator_norm_check(rh.build_jump(small_table, small_grid, 0.0, 0.0, "right"))
    assert rep["holds"]


def test_endpoint_growth_bounded_under_refinement(bg):
    # |mu| * dist^(1/4 + 0.1) stays bounded as grading levels are added
    peaks = []
    for levels in (3, 5):
        grid = sg.build_contour(bg, R=6.0, order=10, levels=levels)
        sol = rh.solve_instance(rh.build_jump(None, grid, 0.0, 0.0, "right"))
        d = np.abs(np.abs(grid.nodes) - bg.inner)
        near = d < 0.1
        peaks.append(float((np.abs(sol.mu[near]).max(axis=(1, 2)) * d[near] ** 0.35).max()))
    assert peaks[1] <= 1.5 * peaks[0]
