import csv

import numpy as np
import pytest
from problems import BOX_EIGS, HO_EIGS, block_box, box, dirac_well, oscillator, scalar

from renosc import Geometry, boundary_from_solution, dirichlet, schrodinger
from renosc.oracle import (
    DiscreteSpectrum,
    OracleError,
    fd_schrodinger_spectrum,
    monotonicity_scan,
    nystrom_resolvent_spectrum,
    shooting_eigenvalues,
)
from renosc.oscillation import count_renormalized
from renosc.weyl import weyl_plus


def ones(x):
    return np.ones_like(np.asarray(x, dtype=float))


def zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def test_box_shooting_spectrum():
    sp = shooting_eigenvalues(box(), lambda_range=(0.5, 30.0))
    assert np.allclose(sp.eigenvalues, [1, 4, 9, 16, 25], atol=1e-8)
    assert np.all(sp.multiplicities == 1)
    assert sp.method == "shooting"


def test_oscillator_levels_are_converged_in_the_truncation():
    for L in (10.0, 12.0):
        sp = shooting_eigenvalues(oscillator(L), lambda_range=(0.0, 6.0))
        assert np.allclose(sp.eigenvalues, [1, 3, 5], atol=1e-6)


def test_decoupled_channels_give_the_union_of_spectra():
    sys = block_box(lambda x: 5.0 + 0 * x)
    sp = shooting_eigenvalues(sys, lambda_range=(0.5, 20.0))
    single = np.concatenate([BOX_EIGS, BOX_EIGS + 5.0])
    expected = np.sort(single[(single > 0.5) & (single < 20.0)])
    assert np.allclose(sp.expanded(), expected, atol=1e-8)
    # 1, 4, 6, 9 (shared by both channels), 14, 16
    assert sp.multiplicities.tolist() == [1, 1, 1, 2, 1, 1]


def test_identical_channels_double_every_eigenvalue():
    sp = shooting_eigenvalues(box(2), lambda_range=(0.5, 10.0))
    assert sp.multiplicities.tolist() == [2, 2, 2]


def test_empty_lambda_range_is_rejected():
    with pytest.raises(OracleError):
        shooting_eigenvalues(box(), lambda_range=(2.0, 2.0))


def test_shooting_is_blind_to_the_matching_point():
    a = shooting_eigenvalues(oscillator(), lambda_range=(0.0, 8.0), match_point=-1.0)
    b = shooting_eigenvalues(oscillator(), lambda_range=(0.0, 8.0), match_point=2.5)
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)


def test_rescaled_initial_frames_leave_eigenvalues_unchanged():
    alpha = dirichlet(1)
    R = np.array([[3.0 - 2.0j]])
    a = shooting_eigenvalues(oscillator(), alpha, lambda_range=(0.0, 8.0))
    b = shooting_eigenvalues(oscillator(), alpha @ R / abs(R[0, 0]), lambda_range=(0.0, 8.0))
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)


def test_spectrum_csv_columns(tmp_path):
    sp = shooting_eigenvalues(box(), lambda_range=(0.5, 5.0))
    path = tmp_path / "spectrum.csv"
    sp.to_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["lambda", "multiplicity", "method", "resolution"]
    assert float(rows[1][0]) == pytest.approx(1.0, abs=1e-8)
    assert rows[2][2] == "shooting"


def test_count_in_uses_open_interval():
    sp = DiscreteSpectrum("test", (0, 1), np.array([1.0, 4.0]), np.array([1, 2]))
    assert sp.count_in(1.0, 5.0) == 2
    assert sp.count_in(0.0, 5.0) == 3


def test_finite_difference_box():
    sp = fd_schrodinger_spectrum(ones, zeros, ones, (0.0, np.pi), 2000, n_eigs=1)
    assert sp.eigenvalues[0] == pytest.approx(1.0, abs=1e-5)
    assert sp.resolution["error_estimate"] < 1e-5


def test_finite_difference_converges_at_second_order():
    errs = []
    for n in (100, 200, 400):
        sp = fd_schrodinger_spectrum(ones, zeros, ones, (0.0, np.pi), n, n_eigs=2)
        errs.append(abs(sp.eigenvalues[1] - 4.0))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all(np.abs(ratios - 4.0) < 0.2)


def test_finite_difference_reports_insufficient_grid():
    with pytest.raises(OracleError, match="too small"):
        fd_schrodinger_spectrum(ones, zeros, ones, (0.0, np.pi), 40, n_eigs=5, accuracy=1e-8)


def test_finite_difference_agrees_with_shooting_on_the_oscillator():
    sh = shooting_eigenvalues(oscillator(), lambda_range=(0.0, 10.0))
    fd = fd_schrodinger_spectrum(ones, np.square, ones, (-10.0, 10.0), 4000, lambda_range=(0.0, 10.0))
    tol = max(1e-5, fd.resolution["error_estimate"])
    assert np.allclose(sh.eigenvalues, fd.eigenvalues, atol=tol)
    assert np.allclose(sh.eigenvalues, HO_EIGS[:5], atol=1e-8)


def test_finite_difference_weight_scales_the_spectrum():
    sp = fd_schrodinger_spectrum(ones, zeros, lambda x: 4.0 * ones(x), (0.0, np.pi), 2000, n_eigs=2)
    assert np.allclose(sp.eigenvalues, [0.25, 1.0], atol=1e-5)


def test_resolvent_quadrature_on_the_box():
    rs = nystrom_resolvent_spectrum(box(), -1.0, grid=800)
    assert rs.top(1)[0] == pytest.approx(0.5, abs=1e-4)
    assert rs.hermitian_residual <= 1e-8
    mapped = rs.mapped_eigenvalues()[:4]
    assert np.allclose(mapped, [1, 4, 9, 16], rtol=1e-3)


def test_resolvent_eigenvalues_map_onto_shooting_spectrum():
    lam0 = 2.0
    rs = nystrom_resolvent_spectrum(oscillator(6.0), lam0, grid=800)
    sh = shooting_eigenvalues(oscillator(6.0), lambda_range=(-5.0, 40.0))
    mu = np.sort(1.0 / (sh.expanded() - lam0))
    big = np.sort(rs.eigenvalues[np.abs(rs.eigenvalues) > 0.05])
    assert len(big) == len(mu[np.abs(mu) > 0.05])
    assert np.allclose(big, mu[np.abs(mu) > 0.05], atol=1e-4)


def test_resolvent_refuses_an_eigenvalue():
    with pytest.raises(OracleError, match="eigenvalue"):
        nystrom_resolvent_spectrum(box(), 4.0, grid=100)


def _half_line_well():
    V = scalar(lambda x: -3.0 * ((x > 1.0) & (x < 3.0)))
    return schrodinger(V, Geometry.half_line(0.0), breakpoints=(1.0, 3.0), x0=2.0)


def test_truncated_eigenvalue_curves_are_monotone():
    sys = _half_line_well()
    table = monotonicity_scan(sys, dirichlet(1), -2.5, (-2.4, -0.3), np.linspace(0.5, 6.0, 23))
    assert len(table.curves) == 1 and not table.ambiguities
    assert table.max_violation() <= 1e-8
    assert table.directions() == [-1]
    # before the well starts the window is empty
    assert table.spectra[0].count_in(-2.4, -0.3) == 0


def test_curves_pass_through_lambda1_at_crossings():
    sys = _half_line_well()
    lam0, lam1 = -2.5, -1.0
    rep = count_renormalized(sys, lam0, lam1, dirichlet(1))
    assert rep.total >= 1
    plus = weyl_plus(sys, lam0, window=(0.0, 12.0))
    for e in rep.events:
        gamma = boundary_from_solution(plus.trajectory.frames_at([e.x_star])[0][0])
        sp = shooting_eigenvalues(sys, dirichlet(1), gamma, (0.0, e.x_star), (lam1 - 0.05, lam1 + 0.05), 16)
        assert len(sp.eigenvalues) == 1
        assert sp.eigenvalues[0] == pytest.approx(lam1, abs=1e-6)
        assert sp.multiplicities[0] == e.nullity


def test_monotonicity_needs_a_finite_left_end():
    with pytest.raises(OracleError):
        monotonicity_scan(dirac_well(1.0), None, 0.0, (-0.5, 0.5), [0.0, 1.0])
