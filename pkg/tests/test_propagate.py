import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from problems import box, free_half_line, scalar

from renosc import Geometry, StepControl, integrate_frame, prufer_decompose, schrodinger
from renosc.hamsys import boundary_from_angle, dirichlet
from renosc.linalg import LinalgError, dagger, nullity, principal_angles, symplectic_j
from renosc.propagate import (
    IntegrationError,
    detector_unitary,
    gauss_panels,
    inner_product_A,
    integrate_frames,
    lagrangian_projection,
)

J1 = symplectic_j(1)


def test_sine_solution_reaches_peak():
    tr = integrate_frame(box(), 1.0, 0.0, np.pi / 2, dirichlet(1))
    end = tr.true_frames([np.pi / 2])[0]
    assert np.allclose(end, [[1.0], [0.0]], atol=1e-9)


def test_backward_integration_matches_closed_form():
    tr = integrate_frame(box(), 4.0, np.pi, 0.0, dirichlet(1))
    xs = np.linspace(0.1, 3.0, 7)
    u = tr.true_frames(xs)[:, :, 0]
    # u = -sin(2(pi - x)) / 2, u' = cos(2(pi - x))
    assert np.allclose(u[:, 0], np.sin(2 * xs) / 2, atol=1e-9)
    assert np.allclose(u[:, 1], np.cos(2 * xs), atol=1e-9)


def test_lagrange_identity_between_two_energies():
    sys = schrodinger(scalar(lambda x: np.cos(3 * x)), Geometry.finite(0.0, 4.0))
    l0, l1 = 1.3, 2.7
    t0, t1 = integrate_frames(sys, [l0, l1], 0.0, 4.0, dirichlet(1))
    for x in (1.0, 2.5, 4.0):
        F = lambda s: t0.true_frames([s])[0]  # noqa: E731
        G = lambda s: t1.true_frames([s])[0]  # noqa: E731
        lhs = dagger(F(x)) @ J1 @ G(x) - dagger(F(0.0)) @ J1 @ G(0.0)
        rhs = (l1 - l0) * inner_product_A(sys, F, G, 0.0, x)
        assert abs(lhs - rhs).max() <= 1e-6 * max(1.0, abs(rhs).max())


def test_real_lambda_keeps_frames_lagrangian():
    sys = schrodinger(scalar(lambda x: 3 * np.sin(x) ** 2), Geometry.finite(0.0, 30.0), m=1)
    tr = integrate_frame(sys, 5.0, 0.0, 30.0, dirichlet(1))
    assert tr.nondegeneracy_residuals().max() <= 1e-8
    assert tr.frame_identity_residuals().max() <= 1e-8


def test_matrix_frames_satisfy_frame_identity():
    def V(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (2, 2), complex)
        out[..., 0, 1] = out[..., 1, 0] = np.cos(x)
        out[..., 1, 1] = x
        return out

    sys = schrodinger(V, Geometry.finite(0.0, 8.0))
    tr = integrate_frame(sys, 3.0, 0.0, 8.0, dirichlet(2))
    assert tr.nondegeneracy_residuals().max() <= 1e-8
    assert tr.frame_identity_residuals().max() <= 1e-8


def test_renormalization_only_changes_right_factor():
    sys = free_half_line()
    tr = integrate_frame(sys, -1.0, 0.0, 40.0, dirichlet(1))
    # the solution grows like e^x, so the stored frames must have been rescaled
    assert tr.log_scales[-1] > np.log(1e10)
    assert np.abs(tr.frame(len(tr) - 1).accumulated_renorm).max() > 1e10
    assert np.abs(tr.frames).max() < 1e6
    xs = np.array([5.0, 20.0, 39.0])
    Y, _ = tr.frames_at(xs)
    exact = np.stack([np.sinh(xs), np.cosh(xs)], axis=-1)[..., None]
    for y, e in zip(Y, exact):
        assert principal_angles(y, e)[0] < 1e-9
    X = np.array([[1.0], [-1.0]])
    for y, t in zip(Y, tr.true_frames(xs, ref=5.0)):
        assert nullity(dagger(X) @ J1 @ y) == nullity(dagger(X) @ J1 @ t)


def test_growth_beyond_float_range_stays_finite_relative_to_a_reference():
    tr = integrate_frame(free_half_line(), -1.0, 0.0, 900.0, dirichlet(1))
    assert tr.log_scales[-1] > 800
    assert np.all(np.isfinite(tr.accs))
    Y = tr.true_frames([899.0, 900.0], ref=899.0)
    assert Y[1, 0, 0] / Y[0, 0, 0] == pytest.approx(np.e, rel=1e-8)


def test_tighter_tolerance_moves_endpoint_little():
    sys = schrodinger(scalar(lambda x: np.cos(2 * x)), Geometry.finite(0.0, 10.0))
    ends = []
    for rtol in (1e-8, 5e-9):
        tr = integrate_frame(sys, 2.0, 0.0, 10.0, dirichlet(1), StepControl(rtol=rtol, atol=rtol * 1e-3))
        ends.append(tr.frames[-1])
    assert principal_angles(*ends)[0] < 10 * 1e-8


def test_methods_agree():
    sys = schrodinger(scalar(lambda x: np.cos(2 * x)), Geometry.finite(0.0, 6.0))
    a = integrate_frame(sys, 2.0, 0.0, 6.0, dirichlet(1), StepControl(method="dopri5"))
    b = integrate_frame(sys, 2.0, 0.0, 6.0, dirichlet(1))
    assert len(b) < len(a)
    assert principal_angles(a.frames[-1], b.frames[-1])[0] < 1e-8


def test_steps_land_on_breakpoints():
    sys = schrodinger(scalar(lambda x: np.where(x < 1.234, 0.0, 5.0)), Geometry.finite(0, 3), breakpoints=(1.234,))
    tr = integrate_frame(sys, 1.0, 0.0, 3.0, dirichlet(1))
    assert np.any(tr.xs == 1.234)


def test_step_budget_exhaustion_raises():
    with pytest.raises(IntegrationError):
        integrate_frame(box(), 100.0, 0.0, np.pi, dirichlet(1), StepControl(max_steps=5))


def test_prufer_phase_jumps_are_small():
    tr = integrate_frame(box(), 30.0, 0.0, np.pi, dirichlet(1))
    ph = tr.prufer_phases()[:, 0]
    assert np.max(np.abs(np.diff(ph))) < np.pi / 2
    # u = sin(kx) has five interior zeros, each adding pi to the continuous angle
    k = np.sqrt(30.0)
    tail = np.arctan2(np.sin(k * np.pi) / k, np.cos(k * np.pi)) % np.pi
    assert ph[-1] - ph[0] == pytest.approx(5 * np.pi + tail, abs=1e-6)


def test_trajectory_csv(tmp_path):
    tr = integrate_frame(box(), 1.0, 0.0, 1.0, dirichlet(1))
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    rows = list(csv.reader(p.open()))
    assert rows[0][:3] == ["x", "re_psi_00", "im_psi_00"]
    assert len(rows) == len(tr) + 1


@pytest.mark.parametrize("psi, theta", [([[0.0], [1.0]], 0.0), ([[1.0], [0.0]], np.pi / 2)])
def test_prufer_standard_frames(psi, theta):
    pf = prufer_decompose(np.array(psi))
    assert pf.theta[0, 0].real == pytest.approx(theta)
    assert pf.rho[0, 0].real == pytest.approx(1.0)


def test_prufer_rejects_non_lagrangian_frame():
    with pytest.raises(LinalgError):
        prufer_decompose(np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1j], [0.0, 0.0]]))


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=50, deadline=None)
@given(seeds, st.integers(1, 3))
def test_prufer_recovers_constructed_angle(seed, m):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    theta = 0.5 * (H + H.conj().T)
    R = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m)) + 3 * np.eye(m)
    psi = boundary_from_angle(theta) @ R
    pf = prufer_decompose(psi, theta_prev=theta)
    assert np.allclose(pf.theta, theta, atol=1e-8)
    assert np.allclose(pf.rho, R, atol=1e-8 * np.linalg.norm(R))
    assert np.allclose(boundary_from_angle(pf.theta) @ pf.rho, psi, atol=1e-8 * np.linalg.norm(psi))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_detector_is_unitary_and_right_invariant(seed, m):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    psi = boundary_from_angle(0.5 * (H + H.conj().T))
    R = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m)) + 3 * np.eye(m)
    U = detector_unitary(psi)
    assert np.allclose(U.conj().T @ U, np.eye(m), atol=1e-10)
    assert np.allclose(detector_unitary(psi @ R), U, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 3))
def test_lagrangian_projection_restores_isotropy(seed, m):
    rng = np.random.default_rng(seed)
    H = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    psi = boundary_from_angle(0.5 * (H + H.conj().T))
    noisy = psi + 1e-7 * (rng.normal(size=psi.shape) + 1j * rng.normal(size=psi.shape))
    fixed = lagrangian_projection(noisy)
    J = symplectic_j(m)
    assert np.linalg.norm(dagger(fixed) @ J @ fixed) < 1e-12 * np.linalg.norm(fixed) ** 2
    assert principal_angles(fixed, psi).max() < 1e-6


def test_inner_product_closed_forms():
    sys = box()

    def F(x):
        return np.array([np.sin(x), np.cos(x)])

    def G(x):
        return np.array([np.sin(2 * x), 2 * np.cos(2 * x)])

    assert inner_product_A(sys, F, F, 0, np.pi) == pytest.approx(np.pi / 2, rel=1e-10)
    assert abs(inner_product_A(sys, F, G, 0, np.pi)) < 1e-12
    # second component carries zero weight
    val = inner_product_A(sys, lambda x: np.array([x, 7.0]), lambda x: np.array([x**2, 1.0]), 0, 1)
    assert val == pytest.approx(0.25, abs=1e-10)


def test_gauss_panels_integrate_polynomials():
    xs, ws, edges = gauss_panels(0.0, 2.0, 3, order=6, breakpoints=(0.5,))
    assert 0.5 in edges
    assert np.sum(ws * xs**7) == pytest.approx(2.0**8 / 8, rel=1e-13)
