import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from renosc.linalg import (
    BranchAmbiguityError,
    LinalgError,
    as_cmatrix,
    dagger,
    hermitian_eig,
    herm_funm,
    nullity,
    principal_angles,
    symplectic_j,
    unitary_eigphases,
    unitary_log_branch,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 4)


def _herm(rng, m):
    H = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return 0.5 * (H + H.conj().T)


def _unitary(rng, m):
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m)))
    return Q


@pytest.mark.parametrize("m", [1, 2, 3, 5])
def test_j_is_skew_and_squares_to_minus_identity(m):
    J = symplectic_j(m)
    assert np.array_equal(J.conj().T, -J)
    assert np.array_equal(J @ J, -np.eye(2 * m))


def test_as_cmatrix_rejects_bad_input():
    with pytest.raises(LinalgError):
        as_cmatrix(np.ones((2, 2, 2)))
    with pytest.raises(LinalgError):
        as_cmatrix([[np.nan]])
    assert as_cmatrix([1.0, 2.0]).shape == (2, 1)


def test_hermitian_eig_rejects_non_hermitian():
    with pytest.raises(LinalgError):
        hermitian_eig([[0, 1], [0, 0]])


def test_nullity_counts_small_singular_values():
    M = np.diag([1.0, 1e-3, 1e-12])
    assert nullity(M) == 1
    assert nullity(M, 1e-2) == 2
    assert nullity(np.zeros((2, 2)), scale=1.0) == 2
    # wide matrices carry structural null directions
    assert nullity(np.ones((1, 3))) == 2


def test_log_branch_ambiguity_is_reported():
    U = np.array([[-1.0 + 0j]])
    with pytest.raises(BranchAmbiguityError):
        unitary_log_branch(U, theta_prev=np.array([[0.0]]))


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_log_branch_inverts_exponential(seed, m):
    rng = np.random.default_rng(seed)
    H = _herm(rng, m)
    U = herm_funm(2 * H, lambda w: np.exp(1j * w))
    theta = unitary_log_branch(U, theta_prev=H)
    # tracked from H itself the branch must return H
    assert np.allclose(theta, H, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_eigphases_of_unitary_are_unimodular_logs(seed, m):
    rng = np.random.default_rng(seed)
    U = _unitary(rng, m)
    phi = unitary_eigphases(U)
    ev = np.linalg.eigvals(U)
    assert np.all(np.diff(phi) >= 0)
    assert np.all((phi > -np.pi) & (phi <= np.pi))
    dist = np.abs(np.exp(1j * phi)[:, None] - ev[None, :])
    assert np.max(np.min(dist, axis=1)) < 1e-10
    assert np.max(np.min(dist, axis=0)) < 1e-10


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(2, 6), st.integers(1, 3))
def test_principal_angles_invariant_under_right_factors(seed, n, k):
    k = min(k, n - 1)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    Y = rng.normal(size=(n, k)) + 1j * rng.normal(size=(n, k))
    R = rng.normal(size=(k, k)) + 1j * rng.normal(size=(k, k)) + 3 * np.eye(k)
    a = principal_angles(X, Y)
    assert np.allclose(a, principal_angles(X @ R, Y), atol=1e-8)
    assert np.all((a >= 0) & (a <= np.pi / 2 + 1e-12))
    assert np.max(principal_angles(X, X @ R)) < 1e-7


def test_principal_angles_resolve_tiny_angles():
    eps = 1e-11
    X = np.array([[1.0], [0.0]])
    Y = np.array([[1.0], [eps]])
    assert principal_angles(X, Y)[0] == pytest.approx(eps, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(seeds, dims)
def test_herm_funm_matches_identity(seed, m):
    rng = np.random.default_rng(seed)
    H = _herm(rng, m)
    s = herm_funm(H, np.sin)
    c = herm_funm(H, np.cos)
    assert np.allclose(s @ s + c @ c, np.eye(m), atol=1e-10)
    assert np.allclose(s, dagger(s), atol=1e-12)
