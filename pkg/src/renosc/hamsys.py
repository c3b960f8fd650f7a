"""Hamiltonian (canonical) systems ``J Psi' = (z A(x) + B(x)) Psi``.

A system is given by its half-dimension ``m``, the rank ``r`` of the weight
``A = diag(W, 0)`` and two coefficient callbacks.  Callbacks must accept a
scalar or a 1-d array of points and return arrays of shape ``(..., r, r)``
and ``(..., 2m, 2m)``; :func:`vectorize_callback` adapts pointwise ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .linalg import as_cmatrix, dagger, herm_funm, symplectic_j

BOUNDARY_TOL = 1e-10
FINITE, HALF_LINE, FULL_LINE = "finite", "half_line", "full_line"


class HamiltonianError(ValueError):
    pass


class DefinitenessWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Geometry:
    kind: str
    a: float = -np.inf
    b: float = np.inf

    def __post_init__(self):
        if self.kind == FINITE:
            ok = np.isfinite(self.a) and np.isfinite(self.b) and self.a < self.b
        elif self.kind == HALF_LINE:
            ok = np.isfinite(self.a) and self.b == np.inf
        elif self.kind == FULL_LINE:
            ok = self.a == -np.inf and self.b == np.inf
        else:
            ok = False
        if not ok:
            raise HamiltonianError(f"invalid geometry {self}")

    @classmethod
    def finite(cls, a, b):
        return cls(FINITE, float(a), float(b))

    @classmethod
    def half_line(cls, a):
        return cls(HALF_LINE, float(a), np.inf)

    @classmethod
    def full_line(cls):
        return cls(FULL_LINE)

    def contains(self, x) -> bool:
        return bool(self.a <= x <= self.b)


def vectorize_callback(fn: Callable, shape: tuple[int, int]) -> Callable:
    """Wrap a pointwise ``x -> matrix`` callback so it accepts arrays."""

    def wrapped(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0:
            return np.asarray(fn(float(x)), dtype=complex).reshape(shape)
        out = np.empty(x.shape + shape, dtype=complex)
        for idx in np.ndindex(x.shape):
            out[idx] = np.asarray(fn(float(x[idx])), dtype=complex).reshape(shape)
        return out

    return wrapped


@dataclass(frozen=True, eq=False)
class HamiltonianSystem:
    m: int
    r: int
    W: Callable
    B: Callable
    geometry: Geometry
    x0: float
    breakpoints: tuple = ()
    limit_point_asserted: bool = True
    sample_window: tuple | None = None
    n_samples: int = 512
    name: str = "system"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1 or not 1 <= self.r <= 2 * self.m:
            raise HamiltonianError(f"need m >= 1 and 1 <= r <= 2m, got m={self.m}, r={self.r}")
        if not self.geometry.contains(self.x0):
            raise HamiltonianError(f"x0={self.x0} outside {self.geometry}")
        bps = tuple(sorted(float(p) for p in self.breakpoints))
        object.__setattr__(self, "breakpoints", bps)
        self.validate()

    @property
    def J(self) -> np.ndarray:
        return symplectic_j(self.m)

    @property
    def E_r(self) -> np.ndarray:
        E = np.zeros((2 * self.m, 2 * self.m), dtype=complex)
        E[: self.r, : self.r] = np.eye(self.r)
        return E

    def A(self, x) -> np.ndarray:
        Wx = np.asarray(self.W(x), dtype=complex)
        out = np.zeros(Wx.shape[:-2] + (2 * self.m, 2 * self.m), dtype=complex)
        out[..., : self.r, : self.r] = Wx
        return out

    def C(self, x) -> np.ndarray:
        Wx = np.asarray(self.W(x), dtype=complex)
        out = np.zeros(Wx.shape[:-2] + (2 * self.m, 2 * self.m), dtype=complex)
        out[..., : self.r, : self.r] = np.linalg.inv(Wx)
        idx = np.arange(self.r, 2 * self.m)
        out[..., idx, idx] = 1.0
        return out

    def coefficients(self, x) -> tuple[np.ndarray, np.ndarray]:
        return self.A(x), np.asarray(self.B(x), dtype=complex)

    def sample_points(self) -> np.ndarray:
        lo, hi = self.sample_window or _default_window(self.geometry, self.x0)
        xs = np.linspace(lo, hi, self.n_samples)
        bps = [p for p in self.breakpoints if lo <= p <= hi]
        return np.unique(np.concatenate([xs, bps])) if bps else xs

    def validate(self, xs=None) -> None:
        """Check the coefficient hypotheses on sample points; raise on failure."""
        xs = self.sample_points() if xs is None else np.asarray(xs, dtype=float)
        Wx = np.asarray(self.W(xs), dtype=complex)
        Bx = np.asarray(self.B(xs), dtype=complex)
        if Wx.shape != xs.shape + (self.r, self.r):
            raise HamiltonianError(f"W returned shape {Wx.shape}, expected {(self.r, self.r)} per point")
        if Bx.shape != xs.shape + (2 * self.m, 2 * self.m):
            raise HamiltonianError(f"B returned shape {Bx.shape}, expected {(2 * self.m,) * 2} per point")
        if not (np.all(np.isfinite(Wx)) and np.all(np.isfinite(Bx))):
            raise HamiltonianError("coefficients are not finite at sampled points")
        if np.max(np.abs(Wx - dagger(Wx))) > BOUNDARY_TOL * max(np.max(np.abs(Wx)), 1.0):
            raise HamiltonianError("W(x) is not Hermitian at sampled points")
        wmin = np.linalg.eigvalsh(0.5 * (Wx + dagger(Wx)))[..., 0]
        if np.any(wmin <= 0):
            bad = xs[np.argmin(wmin)]
            raise HamiltonianError(f"W(x) is not positive definite (x={bad:g})")
        skew = np.linalg.norm(Bx - dagger(Bx), axis=(-2, -1))
        if np.any(skew > BOUNDARY_TOL * np.maximum(np.linalg.norm(Bx, axis=(-2, -1)), 1.0)):
            raise HamiltonianError("B(x) is not Hermitian at sampled points")

    def restrict(self, a: float, b: float, **kw) -> "HamiltonianSystem":
        """Same coefficients on the finite interval [a, b]."""
        x0 = kw.pop("x0", min(max(self.x0, a), b))
        return HamiltonianSystem(
            self.m, self.r, self.W, self.B, Geometry.finite(a, b), x0,
            tuple(p for p in self.breakpoints if a < p < b),
            self.limit_point_asserted, (a, b), self.n_samples,
            kw.pop("name", self.name), dict(self.meta))


def _default_window(geom: Geometry, x0: float) -> tuple[float, float]:
    if geom.kind == FINITE:
        return geom.a, geom.b
    if geom.kind == HALF_LINE:
        return geom.a, geom.a + 50.0
    return x0 - 50.0, x0 + 50.0


def _check_pd(M, what):
    w = np.linalg.eigvalsh(0.5 * (M + dagger(M)))
    if np.any(w[..., 0] <= 0):
        raise HamiltonianError(f"{what} is not positive definite at a sampled point")


def from_sturm_liouville(P: Callable, Q: Callable, R: Callable, geometry: Geometry,
                         *, m: int, x0: float | None = None, breakpoints=(),
                         P_inv: Callable | None = None, **kw) -> HamiltonianSystem:
    """System for ``R^{-1}[-(P u')' + Q u]``: ``A = diag(R, 0)``, ``B = diag(-Q, P^{-1})``.

    ``P``, ``Q``, ``R`` are vectorized callbacks returning ``(..., m, m)``.
    ``P_inv`` may supply ``P^{-1}`` in closed form and saves an inversion
    per coefficient evaluation.
    """

    def Bfn(x):
        Pi = np.asarray(P_inv(x), dtype=complex) if P_inv else np.linalg.inv(np.asarray(P(x), dtype=complex))
        Qx = np.asarray(Q(x), dtype=complex)
        out = np.zeros(Pi.shape[:-2] + (2 * m, 2 * m), dtype=complex)
        out[..., :m, :m] = -Qx
        out[..., m:, m:] = Pi
        return out

    x0 = _default_x0(geometry) if x0 is None else x0
    lo, hi = kw.get("sample_window") or _default_window(geometry, x0)
    xs = np.unique(np.concatenate([np.linspace(lo, hi, kw.get("n_samples", 512)),
                                   [p for p in breakpoints if lo <= p <= hi]]))
    _check_pd(np.asarray(P(xs), dtype=complex), "P(x)")
    probe = HamiltonianSystem(m, m, R, Bfn, geometry, x0, breakpoints, **kw)
    Qx = np.asarray(Q(xs), dtype=complex)
    if np.max(np.abs(Qx - dagger(Qx))) > BOUNDARY_TOL * max(1.0, np.max(np.abs(Qx))):
        raise HamiltonianError("Q(x) is not Hermitian at sampled points")
    return probe


def schrodinger(V: Callable, geometry: Geometry, *, m: int | None = None, **kw) -> HamiltonianSystem:
    """``-u'' + V u`` with ``V`` returning ``(..., m, m)``; ``m`` is read off ``V`` if omitted."""
    if m is None:
        x0 = kw.get("x0")
        m = np.asarray(V(_default_x0(geometry) if x0 is None else x0)).shape[-1]
    eye = np.eye(m, dtype=complex)

    def ones(x):
        out = np.empty(np.shape(x) + (m, m), dtype=complex)
        out[...] = eye
        return out

    return from_sturm_liouville(ones, V, ones, geometry, m=m, P_inv=ones, **kw)


def from_dirac(Bfield: Callable, geometry: Geometry, *, m: int | None = None,
               x0: float | None = None, breakpoints=(), **kw) -> HamiltonianSystem:
    """Dirac-type system ``J Psi' - B Psi = z Psi`` (``A = I_{2m}``).

    ``m`` defaults to half the size of ``Bfield(x0)``.
    """
    x0 = _default_x0(geometry) if x0 is None else x0
    if m is None:
        n = np.asarray(Bfield(x0)).shape[-1]
        if n % 2:
            raise HamiltonianError(f"Dirac field must be 2m x 2m, got size {n}")
        m = n // 2
    eye = np.eye(2 * m, dtype=complex)

    def Wfn(x):
        return np.broadcast_to(eye, np.shape(x) + (2 * m, 2 * m)).copy()

    return HamiltonianSystem(m, 2 * m, Wfn, Bfield, geometry, x0, breakpoints, **kw)


def _default_x0(geom: Geometry) -> float:
    if geom.kind == FINITE:
        return 0.5 * (geom.a + geom.b)
    if geom.kind == HALF_LINE:
        return geom.a + 1.0
    return 0.0


# -- boundary matrices -------------------------------------------------------

class BoundaryDiagnostics(NamedTuple):
    passed: bool
    unitarity: float
    lagrangian: float
    completeness: float


def validate_boundary_matrix(alpha, tol: float = BOUNDARY_TOL) -> BoundaryDiagnostics:
    """Residuals of ``a*a = I``, ``a*Ja = 0`` and ``aa* - Jaa*J = I``."""
    alpha = as_cmatrix(alpha, name="alpha")
    n, m = alpha.shape
    if n != 2 * m:
        raise HamiltonianError(f"boundary matrix must be 2m x m, got {alpha.shape}")
    J = symplectic_j(m)
    ah = alpha.conj().T
    r1 = np.linalg.norm(ah @ alpha - np.eye(m), 2)
    r2 = np.linalg.norm(ah @ J @ alpha, 2)
    r3 = np.linalg.norm(alpha @ ah - J @ alpha @ ah @ J - np.eye(2 * m), 2)
    return BoundaryDiagnostics(bool(max(r1, r2, r3) <= tol), float(r1), float(r2), float(r3))


def dirichlet(m: int) -> np.ndarray:
    """``(0  I)^T``: first block of the solution vanishes."""
    return np.vstack([np.zeros((m, m)), np.eye(m)]).astype(complex)


def neumann(m: int) -> np.ndarray:
    """``(I  0)^T``: second block of the solution vanishes."""
    return np.vstack([np.eye(m), np.zeros((m, m))]).astype(complex)


def boundary_from_angle(theta: np.ndarray) -> np.ndarray:
    s = herm_funm(theta, np.sin)
    c = herm_funm(theta, np.cos)
    return np.vstack([s, c])


def boundary_from_solution(frame) -> np.ndarray:
    """Boundary matrix ``(sin t, cos t)^T`` from the Pruefer angle of a frame."""
    from .propagate import prufer_decompose

    frame = as_cmatrix(frame, name="frame")
    pf = prufer_decompose(frame)
    gamma = boundary_from_angle(pf.theta)
    if not validate_boundary_matrix(gamma).passed:
        # polish: nearest matrix with orthonormal columns on the same plane
        U, _, Vh = np.linalg.svd(gamma, full_matrices=False)
        gamma = U @ Vh
    return gamma


def atkinson_check(sys: HamiltonianSystem, inner_products: np.ndarray, *, warn: bool = True) -> bool:
    """Definiteness spot-check on Gram matrices of computed solutions.

    ``inner_products`` holds ``int_c^d Psi* A Psi`` for sampled subintervals
    (shape ``(k, l, l)``); every diagonal entry must be positive.
    """
    G = np.asarray(inner_products)
    ok = bool(np.all(np.real(np.diagonal(G, axis1=-2, axis2=-1)) > 0))
    if not ok and warn:
        warnings.warn(f"{sys.name}: definiteness check failed on a sampled subinterval",
                      DefinitenessWarning, stacklevel=2)
    return ok
