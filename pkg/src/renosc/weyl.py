"""Weyl-Titchmarsh solutions, Weyl matrices and the Green's kernel.

``Psi_-`` satisfies the boundary condition ``alpha* J Psi(a) = 0`` at a
finite left endpoint.  ``Psi_+`` is the solution that is square integrable
near an infinite right endpoint (or satisfies ``beta`` at a finite one).
On the full line the left solution is the one square integrable near
``-inf``; it plays the role of ``Psi_-``.

Square-integrable solutions are obtained by capping the interval at a large
radius with a boundary frame and integrating back towards the window.  In a
spectral gap the wanted directions dominate backward integration, so the
cap is forgotten exponentially fast; the radius is increased until the
column span at the window edge stops moving.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .hamsys import FINITE, FULL_LINE, HamiltonianSystem, dirichlet, validate_boundary_matrix
from .linalg import dagger, principal_angles, symplectic_j
from .propagate import StepControl, Trajectory, gauss_panels, integrate_batch, integrate_frames

WEYL_SINGULAR_TOL = 1e-10


class WeylError(RuntimeError):
    pass


class WeylConvergenceError(WeylError):
    """The capped solution did not settle as the radius grew."""


@dataclass(frozen=True)
class TruncationPolicy:
    radius: float = 20.0
    growth: float = 1.5
    tol: float = 1e-8
    max_expansions: int = 4

    def radii(self) -> list[float]:
        return [self.radius * self.growth ** k for k in range(self.max_expansions + 1)]


@dataclass(eq=False)
class WeylSolution:
    side: str
    z: complex
    trajectory: Trajectory
    boundary: np.ndarray
    cap_radius: float | None = None
    truncation_error_estimate: float = 0.0
    history: list = field(default_factory=list)

    @property
    def lo(self) -> float:
        return self.trajectory.lo

    @property
    def hi(self) -> float:
        return self.trajectory.hi


def _window(sys: HamiltonianSystem, window):
    if window is not None:
        lo, hi = map(float, window)
    elif sys.geometry.kind == FINITE:
        lo, hi = sys.geometry.a, sys.geometry.b
    else:
        lo, hi = float(sys.sample_points()[0]), float(sys.sample_points()[-1])
    if not lo < hi:
        raise WeylError(f"empty window [{lo}, {hi}]")
    return lo, hi


def _check_boundary(alpha, m):
    alpha = np.asarray(alpha, dtype=complex)
    diag = validate_boundary_matrix(alpha)
    if alpha.shape != (2 * m, m) or not diag.passed:
        raise WeylError(f"invalid boundary matrix (residuals {diag.unitarity:.1e}, "
                        f"{diag.lagrangian:.1e}, {diag.completeness:.1e})")
    return alpha


def weyl_minus_batch(sys: HamiltonianSystem, zs, alpha, *, to_x: float | None = None,
                     ctrl: StepControl = StepControl()) -> list[WeylSolution]:
    if not np.isfinite(sys.geometry.a):
        raise WeylError("weyl_minus needs a finite left endpoint; use weyl_left on the full line")
    alpha = _check_boundary(alpha, sys.m)
    if to_x is None:
        to_x = sys.geometry.b if sys.geometry.kind == FINITE else _window(sys, None)[1]
    trs = integrate_frames(sys, zs, sys.geometry.a, to_x, alpha, ctrl)
    return [WeylSolution("minus", t.z, t, alpha) for t in trs]


def weyl_minus(sys: HamiltonianSystem, z, alpha, *, to_x: float | None = None,
               ctrl: StepControl = StepControl()) -> WeylSolution:
    """Solution with ``Psi(a) = alpha``, integrated forward to ``to_x``."""
    return weyl_minus_batch(sys, [z], alpha, to_x=to_x, ctrl=ctrl)[0]


def _capped_batch(sys, zs, side, lo, hi, trunc, ctrl, cap):
    """Shared driver for the right (side="plus") and left (side="minus") caps."""
    m = sys.m
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    cap = dirichlet(m) if cap is None else _check_boundary(cap, m)
    edge = hi if side == "plus" else lo
    sign = 1.0 if side == "plus" else -1.0
    prev = [None] * zs.size
    done = np.zeros(zs.size, dtype=bool)
    best = [None] * zs.size
    radius = [None] * zs.size
    est = np.full(zs.size, np.inf)
    history = [[] for _ in zs]
    for d in trunc.radii():
        todo = np.flatnonzero(~done)
        c = edge + sign * d
        _, F, Acc, *_ = integrate_batch(sys, zs[todo], c, edge, cap, ctrl, record=False)
        for j, i in enumerate(todo):
            Y = F[0, j]
            if prev[i] is not None:
                ang = float(np.max(principal_angles(prev[i], Y)))
                history[i].append((d, ang))
                est[i] = ang
                if ang <= trunc.tol:
                    done[i] = True
            prev[i] = Y
            best[i] = Y
            radius[i] = d
        if done.all():
            break
    if not done.all():
        bad = [complex(zs[i]) for i in np.flatnonzero(~done)]
        raise WeylConvergenceError(
            f"capped {side} solution did not converge for z={bad} after "
            f"{trunc.max_expansions} radius increases (last angles "
            f"{[f'{e:.1e}' for e in est[~done]]}); z may lie in the essential spectrum")
    start, stop = (hi, lo) if side == "plus" else (lo, hi)
    Y0 = np.stack(best)
    xs, F, Acc, hs, errs, n_proj, logs = integrate_batch(sys, zs, start, stop, Y0, ctrl)
    out = []
    for i, z in enumerate(zs):
        tr = Trajectory(sys, complex(z), xs, F[:, i], Acc[:, i], hs, errs, ctrl, n_proj, logs[:, i])
        out.append(WeylSolution(side, complex(z), tr, cap, radius[i], float(est[i]), history[i]))
    return out


def weyl_plus_batch(sys: HamiltonianSystem, zs, *, window=None, trunc: TruncationPolicy = TruncationPolicy(),
                    ctrl: StepControl = StepControl(), cap=None, beta=None) -> list[WeylSolution]:
    lo, hi = _window(sys, window)
    if sys.geometry.kind == FINITE:
        beta = dirichlet(sys.m) if beta is None else _check_boundary(beta, sys.m)
        trs = integrate_frames(sys, zs, sys.geometry.b, lo, beta, ctrl)
        return [WeylSolution("plus", t.z, t, beta) for t in trs]
    return _capped_batch(sys, zs, "plus", lo, hi, trunc, ctrl, cap)


def weyl_plus(sys: HamiltonianSystem, z, *, window=None, trunc: TruncationPolicy = TruncationPolicy(),
              ctrl: StepControl = StepControl(), cap=None, beta=None) -> WeylSolution:
    """Right Weyl solution over ``window``.

    On a finite interval this is the solution with ``Psi(b) = beta``; on an
    infinite right end it is the capped approximation described above.
    """
    return weyl_plus_batch(sys, [z], window=window, trunc=trunc, ctrl=ctrl, cap=cap, beta=beta)[0]


def weyl_left_batch(sys: HamiltonianSystem, zs, *, window=None, trunc: TruncationPolicy = TruncationPolicy(),
                    ctrl: StepControl = StepControl(), cap=None) -> list[WeylSolution]:
    if sys.geometry.kind != FULL_LINE:
        raise WeylError("left Weyl solutions are only needed on the full line")
    lo, hi = _window(sys, window)
    return _capped_batch(sys, zs, "minus", lo, hi, trunc, ctrl, cap)


def weyl_left(sys: HamiltonianSystem, z, **kw) -> WeylSolution:
    """Solution square integrable near ``-inf`` (full line)."""
    return weyl_left_batch(sys, [z], **kw)[0]


# -- Weyl matrices -------------------------------------------------------------

@dataclass(frozen=True)
class WeylMatrices:
    z: complex
    m_minus: np.ndarray
    m_plus: np.ndarray
    w_of_z: np.ndarray
    x0: float
    herglotz_ok: bool | None = None


def weyl_m(sol: WeylSolution, x0: float, *, tol: float = 1e-10) -> np.ndarray:
    """``M`` with the frame at ``x0`` right-normalized to ``(I, M)^T``."""
    Y, _ = sol.trajectory.frames_at([x0])
    Y = Y[0]
    m = Y.shape[1]
    top = Y[:m]
    s_top = np.linalg.svd(top, compute_uv=False)
    if s_top[-1] <= tol * np.linalg.norm(Y, 2):
        raise WeylError(f"top block of the {sol.side} frame is singular at x0={x0:g}; move x0")
    return Y[m:] @ np.linalg.inv(top)


def _pair(sys, z, alpha, window, trunc, ctrl, beta=None):
    """Minus and plus Weyl solutions at ``z`` over the window."""
    lo, hi = _window(sys, window)
    kind = sys.geometry.kind
    if kind == FULL_LINE:
        minus = weyl_left(sys, z, window=(lo, hi), trunc=trunc, ctrl=ctrl)
    else:
        if alpha is None:
            raise WeylError("alpha is required when the left endpoint is finite")
        minus = weyl_minus(sys, z, alpha, to_x=hi, ctrl=ctrl)
    plus = weyl_plus(sys, z, window=(lo if kind == FULL_LINE else sys.geometry.a, hi),
                     trunc=trunc, ctrl=ctrl, beta=beta)
    return minus, plus


def weyl_matrices(sys: HamiltonianSystem, z, alpha=None, trunc: TruncationPolicy = TruncationPolicy(), *,
                  window=None, x0: float | None = None, ctrl: StepControl = StepControl(),
                  beta=None) -> WeylMatrices:
    z = complex(z)
    x0 = sys.x0 if x0 is None else x0
    minus, plus = _pair(sys, z, alpha, window, trunc, ctrl, beta)
    Mm = weyl_m(minus, x0)
    Mp = weyl_m(plus, x0)
    herg = None
    if z.imag > 0:
        im_p = (Mp - dagger(Mp)) / 2j
        im_m = -(Mm - dagger(Mm)) / 2j
        tol = 1e-10 * max(np.linalg.norm(Mp), np.linalg.norm(Mm), 1.0)
        herg = bool(np.linalg.eigvalsh(im_p)[0] > -tol and np.linalg.eigvalsh(im_m)[0] > -tol)
    return WeylMatrices(z, Mm, Mp, Mm - Mp, x0, herg)


# -- Green's kernel ------------------------------------------------------------

@dataclass(eq=False)
class GreensKernel:
    """``K(z, x, x')`` assembled from Weyl frames at ``z`` and ``conj(z)``.

    Frames may carry any right normalization; the kernel uses
    ``W1 = -Psi_+(zbar)* J Psi_-(z)`` for ``x < x'`` and
    ``W2 = Psi_-(zbar)* J Psi_+(z)`` for ``x > x'``, which reduce to the
    usual ``M_- - M_+`` when both frames are normalized to ``(I, M)^T``.
    """

    z: complex
    minus: WeylSolution
    plus: WeylSolution
    minus_conj: WeylSolution
    plus_conj: WeylSolution
    x0: float
    W1: np.ndarray = field(init=False)
    W2: np.ndarray = field(init=False)

    def __post_init__(self):
        J = symplectic_j(self.minus.trajectory.system.m)
        x = np.array([self.x0])
        Pm, Pp = self.psi_minus(x)[0], self.psi_plus(x)[0]
        Pmc, Ppc = self.psi_minus(x, conj=True)[0], self.psi_plus(x, conj=True)[0]
        self.W1 = -dagger(Ppc) @ J @ Pm
        self.W2 = dagger(Pmc) @ J @ Pp
        for W, F, G in ((self.W1, Ppc, Pm), (self.W2, Pmc, Pp)):
            # measured against the frame sizes, so a 1 x 1 Wronskian can be singular too
            scale = np.linalg.norm(F, 2) * np.linalg.norm(G, 2)
            s = np.linalg.svd(W, compute_uv=False)
            if s[-1] <= WEYL_SINGULAR_TOL * scale:
                raise WeylError(f"Wronskian singular at z={self.z} (sigma ratio {s[-1] / scale:.1e}); "
                                f"z is an eigenvalue")
        self._W1inv = np.linalg.inv(self.W1)
        self._W2inv = np.linalg.inv(self.W2)

    @property
    def lo(self) -> float:
        return max(s.lo for s in (self.minus, self.plus, self.minus_conj, self.plus_conj))

    @property
    def hi(self) -> float:
        return min(s.hi for s in (self.minus, self.plus, self.minus_conj, self.plus_conj))

    def psi_minus(self, x, conj=False):
        s = self.minus_conj if conj else self.minus
        return s.trajectory.true_frames(x, ref=self.x0)

    def psi_plus(self, x, conj=False):
        s = self.plus_conj if conj else self.plus
        return s.trajectory.true_frames(x, ref=self.x0)

    def __call__(self, x, xp) -> np.ndarray:
        x, xp = np.broadcast_arrays(np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(xp, float)))
        left = self.psi_minus(x) @ self._W1inv @ dagger(self.psi_plus(xp, True))
        right = self.psi_plus(x) @ self._W2inv @ dagger(self.psi_minus(xp, True))
        # on the diagonal the kernel jumps; return the mean of the two limits
        out = np.where((x < xp)[:, None, None], left, right)
        on = x == xp
        out[on] = 0.5 * (left[on] + right[on])
        return out

    def jump(self, x) -> np.ndarray:
        """``Psi_+ W2^{-1} Psi_-(zbar)* - Psi_- W1^{-1} Psi_+(zbar)*``; equals ``J^{-1}``."""
        x = np.atleast_1d(np.asarray(x, float))
        return (self.psi_plus(x) @ self._W2inv @ dagger(self.psi_minus(x, True))
                - self.psi_minus(x) @ self._W1inv @ dagger(self.psi_plus(x, True)))

    def wronskian_at(self, x) -> np.ndarray:
        """``-Psi_+(zbar, x)* J Psi_-(z, x)``; independent of ``x``."""
        J = symplectic_j(self.minus.trajectory.system.m)
        x = np.atleast_1d(np.asarray(x, float))
        return -dagger(self.psi_plus(x, True)) @ J @ self.psi_minus(x)

    def to_csv(self, path, xs, xps=None) -> None:
        xps = xs if xps is None else xps
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "xp", "smin", "smax"])
            for x in xs:
                K = self(np.full(len(xps), x), xps)
                s = np.linalg.svd(K, compute_uv=False)
                for xp, row in zip(xps, s):
                    w.writerow([repr(float(x)), repr(float(xp)), repr(float(row[-1])), repr(float(row[0]))])


def greens_kernel(sys: HamiltonianSystem, z, alpha=None, trunc: TruncationPolicy = TruncationPolicy(), *,
                  window=None, x0: float | None = None, ctrl: StepControl = StepControl(),
                  beta=None) -> GreensKernel:
    z = complex(z)
    x0 = sys.x0 if x0 is None else x0
    minus, plus = _pair(sys, z, alpha, window, trunc, ctrl, beta)
    if z.imag == 0:
        minus_c, plus_c = minus, plus
    else:
        minus_c, plus_c = _pair(sys, z.conjugate(), alpha, window, trunc, ctrl, beta)
    return GreensKernel(z, minus, plus, minus_c, plus_c, x0)


@dataclass(frozen=True)
class ResolventResult:
    xs: np.ndarray
    values: np.ndarray
    error_estimate: float


def _resolvent_pass(kernel: GreensKernel, F, xs, c, d, n_panels, order):
    sys = kernel.minus.trajectory.system
    edges_extra = [x for x in xs if c < x < d]
    nodes, weights, edges = gauss_panels(c, d, n_panels, order, list(sys.breakpoints) + edges_extra)
    AF = sys.A(nodes) @ np.asarray(F(nodes), dtype=complex)[..., None]
    gm = (dagger(kernel.psi_minus(nodes, True)) @ AF)[..., 0] * weights[:, None]
    gp = (dagger(kernel.psi_plus(nodes, True)) @ AF)[..., 0] * weights[:, None]
    # cumulative integrals at panel edges
    panel = np.searchsorted(edges, nodes, side="right") - 1
    n_e = len(edges)
    Im_e = np.zeros((n_e, gm.shape[1]), dtype=complex)
    Ip_e = np.zeros((n_e, gm.shape[1]), dtype=complex)
    np.add.at(Im_e, panel + 1, gm)
    np.add.at(Ip_e, panel, gp)
    Im_e = np.cumsum(Im_e, axis=0)
    Ip_e = np.cumsum(Ip_e[::-1], axis=0)[::-1]
    k = np.clip(np.searchsorted(edges, xs), 0, n_e - 1)
    below = xs <= c
    above = xs >= d
    Im_x = np.where(below[:, None], 0.0, np.where(above[:, None], Im_e[-1], Im_e[k]))
    Ip_x = np.where(above[:, None], 0.0, np.where(below[:, None], Ip_e[0], Ip_e[k]))
    G = (kernel.psi_plus(xs) @ (kernel._W2inv @ Im_x[..., None])
         + kernel.psi_minus(xs) @ (kernel._W1inv @ Ip_x[..., None]))[..., 0]
    return G


def apply_resolvent(kernel: GreensKernel, F: Callable, xs, support, *, n_panels: int = 64,
                    order: int = 10) -> ResolventResult:
    """``G(x) = int K(z, x, x') A(x') F(x') dx'`` at the points ``xs``.

    ``F`` maps an array of points to ``(..., 2m)`` and vanishes outside
    ``support``.  The integral is evaluated with composite Gauss-Legendre
    panels whose edges include every output point and breakpoint; the
    estimate compares against a pass with twice as many panels.
    """
    c, d = map(float, support)
    xs = np.asarray(xs, dtype=float)
    if c < kernel.lo - 1e-12 or d > kernel.hi + 1e-12:
        raise WeylError(f"support [{c}, {d}] leaves kernel coverage [{kernel.lo}, {kernel.hi}]")
    if np.any(xs < kernel.lo - 1e-12) or np.any(xs > kernel.hi + 1e-12):
        raise WeylError("output points leave kernel coverage")
    G1 = _resolvent_pass(kernel, F, xs, c, d, n_panels, order)
    G2 = _resolvent_pass(kernel, F, xs, c, d, 2 * n_panels, order)
    err = float(np.max(np.abs(G2 - G1)) / max(np.max(np.abs(G2)), 1e-300))
    return ResolventResult(xs, G2, err)
