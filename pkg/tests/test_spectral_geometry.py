import numpy as np
import pytest

from mch_rh import spectral_geometry as sg


def test_background_ordering_enforced():
    with pytest.raises(sg.ConfigurationError):
        sg.BackgroundPair(2.0, 1.0)
    with pytest.raises(sg.ConfigurationError):
        sg.BackgroundPair(1.0, 1.0)
    assert sg.BackgroundPair(1.0, 1.0, allow_equal=True).degenerate


def test_segments(bg):
    assert bg.segment_of(3.0) == sg.SIGMA1
    assert bg.segment_of(-0.7) == sg.SIGMA0
    assert bg.segment_of(0.2) == sg.GAMMA2
    with pytest.raises(sg.DomainError):
        bg.segment_of(0.5)


def test_branch_root_at_zero_plus_side(bg):
    assert sg.branch_root(2, 0.0, "plus", bg) == pytest.approx(0.5j, abs=1e-15)
    assert sg.branch_root(2, 0.0, "minus", bg) == pytest.approx(-0.5j, abs=1e-15)


def test_branch_root_real_outside_cut(bg):
    assert sg.branch_root(2, 1.0, "off", bg) == pytest.approx(np.sqrt(0.75), abs=1e-15)
    assert sg.branch_root(2, -1.0, "off", bg) == pytest.approx(-np.sqrt(0.75), abs=1e-15)


def test_branch_root_large_imaginary(bg):
    v = complex(sg.branch_root(1, 100j, "off", bg))
    assert v * v == pytest.approx(-10000 - 1, rel=1e-14)
    assert v.imag > 0
    assert abs(v / 100j - 1) < 1e-4


def test_branch_root_rejects_branch_points_and_untagged_cut(bg):
    with pytest.raises(sg.DomainError):
        sg.branch_root(2, 0.5, "off", bg)
    with pytest.raises(sg.UsageError):
        sg.branch_root(1, 0.7, "off", bg)


def test_inner_cut_sign_follows_upper_half_plane(bg):
    # pinned regression: the plus-side value on the inner cut of l1 is +i sqrt(1 - lam^2)
    x = 0.7
    plus = complex(sg.branch_root(1, x, "plus", bg))
    near = complex(sg.branch_root(1, x + 1e-12j, "off", bg))
    assert plus == pytest.approx(1j * np.sqrt(1 - x * x), abs=1e-14)
    assert abs(plus - near) < 1e-9


def test_gauge_matrix_oracle_value(bg):
    # 50-digit evaluation of the closed form at lam = 2i, j = 2
    H, Hinv = sg.gauge_matrix(2, 2j, "off", bg)
    expected = np.array([[-0.6154122094026356, -0.7882054380161092j],
                         [-0.7882054380161092j, -0.6154122094026356]])
    assert np.abs(H - expected).max() < 1e-14
    assert np.abs(H @ Hinv - np.eye(2)).max() < 1e-12


def test_gauge_matrix_det_near_cut(bg):
    lam = np.array([0.3 + 1e-9j, 0.3 - 1e-9j, 0.7 + 1e-10j, 1.5 + 1e-6j, -3 + 0.5j])
    for j in (1, 2):
        H, Hinv = sg.gauge_matrix(j, lam, "off", bg)
        assert np.abs(np.linalg.det(H) - 1).max() < 1e-10
        assert np.abs(H @ Hinv - np.eye(2)).max() < 1e-10


def test_phase_direct_substitution(bg):
    assert complex(sg.phase(2, 1.0, 0.0, 1.0, "off", bg)) == pytest.approx(1j * np.sqrt(0.75), abs=1e-15)


def test_phase_purely_imaginary_on_sigma1(bg):
    lam = np.array([-15.0, -1.2, 1.01, 4.0, 19.0])
    f = sg.phase(2, 0.7, 0.3, lam, "off", bg)
    assert np.abs(f.real).max() < 1e-12


def test_left_exponential_oracle(bg):
    f = complex(sg.phase(1, 1.0, 0.0, 0.9, "plus", bg))
    assert np.exp(-2 * f) == pytest.approx(1.5463385247736058, rel=1e-14)


def test_phase_pole_and_time_sign(bg):
    with pytest.raises(sg.PoleError):
        sg.phase(2, 0.0, 0.1, 0.0, "plus", bg)
    with pytest.raises(sg.UsageError):
        sg.phase(2, 0.0, -0.1, 1.0, "off", bg)


def test_grading_reaches_branch_point(bg):
    grid = sg.build_contour(bg, R=20.0, panels_per_unit=8, grading=3, order=8)
    width = 1.0 / 8
    gap = np.abs(grid.nodes - bg.inner).min()
    assert 0 < gap < width * 1e-2
    assert not np.any(grid.nodes == bg.inner)


def test_node_bookkeeping(small_grid):
    assert small_grid.size == len(small_grid.panels) * small_grid.order
    assert sum(len(s) for s in small_grid.panel_slices()) == small_grid.size
    assert np.all(np.diff(small_grid.nodes) > 0)
    assert np.all(small_grid.weights > 0)
    assert not np.any(small_grid.nodes == 0.0)


def test_grid_is_mirror_symmetric(small_grid):
    assert np.allclose(small_grid.nodes, -small_grid.nodes[::-1], rtol=0, atol=1e-14)
    assert np.allclose(small_grid.weights, small_grid.weights[::-1], rtol=1e-12)


def test_quadrature_integrates_smooth_functions(small_grid):
    g = small_grid
    total = np.sum(g.weights * np.exp(-g.nodes**2))
    assert total == pytest.approx(np.sqrt(np.pi) * 1.0, rel=1e-10)


def test_segment_labels_match_positions(small_grid, bg):
    for lam, seg in zip(small_grid.nodes[::7], small_grid.segments[::7]):
        assert bg.segment_of(lam) == seg


def test_invalid_contour_arguments(bg):
    with pytest.raises(sg.ConfigurationError):
        sg.build_contour(bg, R=0.5)
    with pytest.raises(sg.ConfigurationError):
        sg.build_contour(bg, panels_per_unit=1)


def test_panel_interpolation_reproduces_smooth_data(small_grid):
    f = np.cos(small_grid.nodes)
    x = np.array([-7.3, -0.8, -0.3, 0.1, 0.75, 2.2])
    assert np.abs(sg.panel_interpolate(small_grid, f, x) - np.cos(x)).max() < 1e-9
