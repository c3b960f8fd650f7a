"""Small dense complex linear algebra used throughout the package.

Matrices are plain ``numpy`` arrays of complex dtype.  Everything here is a
pure function of its inputs.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

ABS_FLOOR = 1e-30


class LinalgError(ValueError):
    pass


class BranchAmbiguityError(LinalgError):
    """Two logarithm branches are equally close to the previous angle."""


class HermEig(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray


class Svd(NamedTuple):
    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray


def as_cmatrix(M, *, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-d complex array or raise."""
    M = np.asarray(M, dtype=complex)
    if M.ndim == 1:
        M = M[:, None]
    if M.ndim != 2:
        raise LinalgError(f"{name} must be 2-d, got shape {M.shape}")
    if M.shape[0] == 0 or M.shape[1] == 0:
        raise LinalgError(f"{name} is empty")
    if not np.all(np.isfinite(M)):
        raise LinalgError(f"{name} has non-finite entries")
    return M


def symplectic_j(m: int) -> np.ndarray:
    """The 2m x 2m matrix [[0, -I], [I, 0]]."""
    I = np.eye(m)
    Z = np.zeros((m, m))
    return np.block([[Z, -I], [I, Z]]).astype(complex)


def dagger(M: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def hermitian_eig(H, *, herm_tol: float = 1e-10) -> HermEig:
    H = as_cmatrix(H, name="H")
    n, k = H.shape
    if n != k:
        raise LinalgError(f"hermitian_eig needs a square matrix, got {H.shape}")
    scale = np.linalg.norm(H, 2)
    if np.linalg.norm(H - H.conj().T, 2) > herm_tol * max(scale, ABS_FLOOR):
        raise LinalgError("matrix is not Hermitian within tolerance")
    w, Q = np.linalg.eigh(0.5 * (H + H.conj().T))
    return HermEig(w, Q)


def svd(M) -> Svd:
    M = as_cmatrix(M, name="M")
    U, s, Vh = np.linalg.svd(M)
    return Svd(U, s, Vh.conj().T)


def nullity(M, rel_tol: float = 1e-8, *, scale: float | None = None) -> int:
    """Count singular values at or below ``rel_tol`` times the reference scale.

    The reference is the largest singular value unless ``scale`` is given
    (used for span-normalized products whose natural scale is 1).
    """
    if rel_tol <= 0:
        raise LinalgError("rel_tol must be positive")
    M = np.asarray(M, dtype=complex)
    if M.ndim == 1:
        M = M[:, None]
    s = np.linalg.svd(M, compute_uv=False)
    ref = s[0] if scale is None else scale
    thresh = rel_tol * max(ref, ABS_FLOOR)
    # an m x n matrix with n > m has n - m structural null directions
    return int(np.sum(s <= thresh) + max(M.shape[1] - M.shape[0], 0))


def orth(M: np.ndarray) -> np.ndarray:
    """Orthonormal basis (thin QR) of the column span; works on stacks."""
    Q, _ = np.linalg.qr(M)
    return Q


def herm_funm(H: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix via its eigendecomposition."""
    w, Q = np.linalg.eigh(0.5 * (H + dagger(H)))
    return (Q * fn(w)[..., None, :]) @ dagger(Q)


def unitary_eigphases(U: np.ndarray) -> np.ndarray:
    """Eigenphases in (-pi, pi] of a (stack of) unitary matrices, sorted."""
    ev = np.linalg.eigvals(U)
    phi = np.angle(ev)
    phi = np.where(phi <= -np.pi + 1e-12, np.pi, phi)
    return np.sort(phi, axis=-1)


def unitary_schur(U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-modulus eigenvalues and orthonormal eigenvectors of a unitary matrix."""
    T, Z = sla.schur(U, output="complex")
    ev = np.diag(T)
    return ev / np.abs(ev), Z


def unitary_log_branch(U, theta_prev=None, *, unit_tol: float = 1e-8) -> np.ndarray:
    """Hermitian ``theta`` with ``expm(2i theta) = U``.

    Each eigenphase is placed on the branch closest to ``theta_prev``
    (measured by the Rayleigh quotient of ``theta_prev`` on that
    eigenvector).  Without ``theta_prev`` the principal branch
    ``(-pi/2, pi/2]`` is used.
    """
    U = as_cmatrix(U, name="U")
    m = U.shape[0]
    if np.linalg.norm(U.conj().T @ U - np.eye(m), 2) > unit_tol:
        raise LinalgError("U is not unitary within tolerance")
    ev, Z = unitary_schur(U)
    half = np.angle(ev) / 2.0
    half = np.where(half <= -np.pi / 2 + 1e-12, np.pi / 2, half)
    if theta_prev is not None:
        theta_prev = as_cmatrix(theta_prev, name="theta_prev")
        target = np.real(np.einsum("ij,ik,kj->j", Z.conj(), theta_prev, Z))
        shift = np.round((target - half) / np.pi)
        frac = (target - half) / np.pi - np.floor((target - half) / np.pi)
        if np.any(np.abs(frac - 0.5) < 1e-9):
            raise BranchAmbiguityError(
                "eigenphase equidistant from two branches; refine the step")
        half = half + np.pi * shift
    theta = (Z * half) @ Z.conj().T
    return 0.5 * (theta + theta.conj().T)


def principal_angles(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Principal angles between the column spans of X and Y (ascending)."""
    Qx = orth(X)
    Qy = orth(Y)
    s = np.linalg.svd(dagger(Qx) @ Qy, compute_uv=False)
    s = np.clip(s, -1.0, 1.0)
    # arcsin of the complementary part is accurate for small angles
    P = Qy - Qx @ (dagger(Qx) @ Qy)
    t = np.linalg.svd(P, compute_uv=False)
    small = np.sort(np.arcsin(np.clip(t, 0.0, 1.0)), axis=-1)
    big = np.sort(np.arccos(s), axis=-1)
    return np.where(big < 0.5, small, big)
