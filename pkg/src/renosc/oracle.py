"""Independent eigenvalue solvers used to check the oscillation counts.

* ``shooting_eigenvalues``: scans ``lambda`` for rank drops of the endpoint
  condition ``beta* J Psi_-(lambda, b)``, located through the winding of
  the eigenphases of the endpoint detector.
* ``fd_schrodinger_spectrum``: second-order finite differences for
  ``R^{-1}[-(P u')' + Q u]`` with Dirichlet ends.
* ``nystrom_resolvent_spectrum``: quadrature discretization of the
  restricted resolvent, whose eigenvalues are ``1 / (lambda_j - lambda0)``.
* ``monotonicity_scan``: eigenvalue curves of ``(a, c)`` truncations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .hamsys import FINITE, HamiltonianSystem, boundary_from_solution, dirichlet
from .linalg import dagger, nullity, symplectic_j
from .oscillation import _aligned, _crossings, _match, _orth
from .propagate import StepControl, detector_unitary, integrate_batch
from .weyl import GreensKernel, TruncationPolicy, WeylError, weyl_minus, weyl_plus


class OracleError(RuntimeError):
    pass


@dataclass(eq=False)
class DiscreteSpectrum:
    method: str
    interval: tuple
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    boundary: dict = field(default_factory=dict)
    resolution: dict = field(default_factory=dict)

    def count_in(self, lo: float, hi: float) -> int:
        sel = (self.eigenvalues > lo) & (self.eigenvalues < hi)
        return int(np.sum(self.multiplicities[sel]))

    def expanded(self) -> np.ndarray:
        return np.repeat(self.eigenvalues, self.multiplicities)

    def to_rows(self):
        res = self.resolution.get("lambda_tol", np.nan)
        return [[repr(float(l)), int(k), self.method, repr(float(res))]
                for l, k in zip(self.eigenvalues, self.multiplicities)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "multiplicity", "method", "resolution"])
            w.writerows(self.to_rows())


def _finite(sys: HamiltonianSystem, interval):
    if interval is None:
        if sys.geometry.kind != FINITE:
            raise OracleError("an interval is required for systems on infinite domains")
        return sys
    a, b = map(float, interval)
    if sys.geometry.kind == FINITE and (a, b) == (sys.geometry.a, sys.geometry.b):
        return sys
    return sys.restrict(a, b)


class _Endpoint:
    """Two-sided shooting: ``Psi_alpha`` from ``a`` and ``Psi_beta`` from ``b``
    meet at an interior point ``c``; ``lambda`` is an eigenvalue iff their
    planes intersect there (equivalently ``beta* J Psi_alpha(lambda, b)`` is
    singular), with the intersection dimension as multiplicity.

    Matching inside the interval avoids the abrupt endpoint swings that
    single-sided shooting shows when ``b`` lies in a classically forbidden
    region.  Phases are taken after the symplectic scaling ``diag(k I, I/k)``
    of both planes, with ``k`` balancing the diagonal blocks of
    ``lambda A(c) + B(c)`` (a scaled Pruefer angle).  Scaling does not move
    intersections but evens out the rotation speed in ``lambda``.
    """

    def __init__(self, sys, alpha, beta, ctrl, match_point=None):
        self.sys, self.alpha, self.beta, self.ctrl = sys, alpha, beta, ctrl
        self.J = symplectic_j(sys.m)
        self.n_evals = 0
        a, b = sys.geometry.a, sys.geometry.b
        c = sys.x0 if match_point is None else float(match_point)
        if not a < c < b:
            c = 0.5 * (a + b)
        self.c = c
        self.Ac, self.Bc = sys.coefficients(c)

    def frames(self, lams):
        lams = np.asarray(lams, dtype=float)
        g = self.sys.geometry
        _, Fm, *_ = integrate_batch(self.sys, lams, g.a, self.c, self.alpha, self.ctrl, record=False)
        _, Fp, *_ = integrate_batch(self.sys, lams, g.b, self.c, self.beta, self.ctrl, record=False)
        self.n_evals += len(lams)
        return np.stack([_orth(Fm[0]), _orth(Fp[0])], axis=1)

    def scale(self, lam: float) -> float:
        m = self.sys.m
        H = lam * self.Ac + self.Bc
        h11 = np.linalg.norm(H[:m, :m], 2)
        h22 = np.linalg.norm(H[m:, m:], 2)
        if h11 == 0 or h22 == 0:
            return 1.0
        return float(np.clip((h11 / h22) ** 0.25, 1e-2, 1e2))

    def phases(self, Q, k: float):
        """``Q`` has shape ``(n, 2, 2m, m)``: minus and plus frames at ``c``."""
        m = self.sys.m
        t = np.concatenate([np.full(m, k), np.full(m, 1.0 / k)])[:, None]
        Om = dagger(detector_unitary(t * Q[:, 1])) @ detector_unitary(t * Q[:, 0])
        return np.sort(np.angle(np.linalg.eigvals(Om)), axis=-1)

    def nullity(self, lam, rank_tol):
        """Intersection dimension at ``c``, measured in the balanced coordinates.

        The scaling is symplectic, so it preserves the intersection; it also
        makes singular values comparable to the phase offsets, which keeps
        the rank test meaningful for large ``|lambda|``.
        """
        m = self.sys.m
        k = self.scale(lam)
        t = np.concatenate([np.full(m, k), np.full(m, 1.0 / k)])[:, None]
        Q = _orth(t * self.frames([lam])[0])
        return nullity(dagger(Q[1]) @ self.J @ Q[0], rank_tol, scale=1.0)


class _Scan:
    """Grid of ``lambda`` values with endpoint frames at ``lambda`` and ``lambda + eps``."""

    def __init__(self, ep: _Endpoint, lams):
        self.ep = ep
        self.lam = np.empty(0)
        self.Q = np.empty((0, 2, 2 * ep.sys.m, ep.sys.m), complex)
        self.Qe = self.Q.copy()
        self.eps = np.empty(0)
        self.add(lams)

    def add(self, lams):
        lams = np.asarray(lams, dtype=float)
        eps = 1e-7 * np.maximum(1.0, np.abs(lams))
        F = self.ep.frames(np.concatenate([lams, lams + eps]))
        lam = np.concatenate([self.lam, lams])
        order = np.argsort(lam)
        self.lam = lam[order]
        self.Q = np.concatenate([self.Q, F[: len(lams)]])[order]
        self.Qe = np.concatenate([self.Qe, F[len(lams):]])[order]
        self.eps = np.concatenate([self.eps, eps])[order]

    def cell(self, i):
        """Phases at both ends, crossing counts and the speed test for cell ``i``."""
        ep = self.ep
        k = ep.scale(self.lam[i])
        ph = ep.phases(np.stack([self.Q[i], self.Q[i + 1], self.Qe[i], self.Qe[i + 1]]), k)
        d, p1 = _aligned(ph[0], ph[1])
        speed = max(np.max(np.abs(_match(ph[0], ph[2]))) / self.eps[i],
                    np.max(np.abs(_match(ph[1], ph[3]))) / self.eps[i + 1])
        up, down = _crossings(ph[0], d, p1)
        return k, ph[0], p1, d, up, down, speed


def shooting_eigenvalues(sys: HamiltonianSystem, alpha=None, beta=None, interval=None,
                         lambda_range=(0.0, 1.0), resolution: int = 64, *,
                         ctrl: StepControl = StepControl(), lambda_tol: float = 1e-12,
                         rank_tol: float = 1e-8, max_evals: int = 200_000,
                         match_point: float | None = None) -> DiscreteSpectrum:
    """Eigenvalues in ``lambda_range`` of the problem on a finite interval.

    ``lambda`` is an eigenvalue iff ``beta* J Psi_-(lambda, b)`` is singular,
    i.e. iff an eigenphase of the matching detector passes through 0.  The
    matching point defaults to ``sys.x0`` (or the midpoint) and should sit
    where eigenfunctions are not exponentially small.  The
    scan refines cells until the phases move less than ``pi/4`` per cell
    (judged from the end values and from the phase speed at both ends) and
    each cell holds at most one crossing strand.  Each crossing is then
    bracketed to ``lambda_tol`` by safeguarded regula falsi.  The geometric
    multiplicity is the SVD nullity of the endpoint matrix at the root.
    """
    fsys = _finite(sys, interval)
    m = fsys.m
    alpha = dirichlet(m) if alpha is None else np.asarray(alpha, complex)
    beta = dirichlet(m) if beta is None else np.asarray(beta, complex)
    lo, hi = map(float, lambda_range)
    if not lo < hi:
        raise OracleError(f"empty lambda range ({lo}, {hi})")
    ep = _Endpoint(fsys, alpha, beta, ctrl, match_point)
    scan = _Scan(ep, np.linspace(lo, hi, resolution + 1))
    sep_tol = 1e-9 * max(1.0, hi - lo)
    while True:
        split = []
        cells = []
        for i in range(len(scan.lam) - 1):
            k, pl, pr, d, up, down, speed = scan.cell(i)
            width = scan.lam[i + 1] - scan.lam[i]
            if width > sep_tol and (speed * width >= np.pi / 4 or np.max(np.abs(d)) >= np.pi / 4
                                    or up + down > 1):
                split.append(i)
            elif up + down:
                cells.append((i, k, pl, pr, d, up, down))
        if not split:
            break
        if ep.n_evals + 2 * len(split) > max_evals:
            raise OracleError("lambda grid too coarse: refinement budget exhausted")
        idx = np.array(split)
        scan.add(0.5 * (scan.lam[idx] + scan.lam[idx + 1]))

    n_up = sum(c[5] for c in cells)
    n_down = sum(c[6] for c in cells)
    work = []
    for i, k, pl, pr, d, up, down in cells:
        crossing = ((pl < 0) & (pr >= 0) & (d > 0)) | ((pl >= 0) & (pr < 0) & (d < 0))
        j = int(np.flatnonzero(crossing)[0])
        work.append({"l": scan.lam[i], "r": scan.lam[i + 1], "k": k, "pl": pl, "fl": pl[j],
                     "fr": pr[j], "j": j, "strands": up + down})
    roots = _refine_roots(ep, work, lambda_tol)
    eigs = np.array([r for r, _ in roots])
    mults = np.array([ep.nullity(r, rank_tol) for r in eigs], dtype=int)
    mismatch = [float(e) for e, k, w in zip(eigs, mults, work) if k != w["strands"]]
    if np.any(mults < 1):
        raise OracleError(f"phase crossing without endpoint rank drop at {eigs[mults < 1]}")
    return DiscreteSpectrum(
        "shooting", (fsys.geometry.a, fsys.geometry.b), eigs, mults,
        {"alpha": alpha, "beta": beta},
        {"lambda_tol": lambda_tol, "match_point": ep.c, "cells": len(scan.lam) - 1, "evaluations": ep.n_evals,
         "strands_up": n_up, "strands_down": n_down, "multiplicity_mismatch": mismatch})


def _refine_roots(ep: _Endpoint, work, lambda_tol):
    """Batched Illinois iteration on the tracked crossing strand of each cell."""
    for s in work:
        s.update(side=0, done=False)
    for _ in range(200):
        act = [s for s in work if not s["done"]]
        if not act:
            break
        xs = []
        for s in act:
            fl, fr = s["fl"], s["fr"]
            x = s["r"] - fr * (s["r"] - s["l"]) / (fr - fl) if fr != fl else 0.5 * (s["l"] + s["r"])
            if not s["l"] < x < s["r"]:
                x = 0.5 * (s["l"] + s["r"])
            xs.append(x)
        Q = ep.frames(xs)
        for s, x, q in zip(act, xs, Q):
            p = ep.phases(q[None], s["k"])[0]
            d = _match(s["pl"], p)
            f = s["pl"][s["j"]] + d[s["j"]]
            if f == 0.0:
                s["l"] = s["r"] = x
            elif np.sign(f) == np.sign(s["fl"]):
                # the left end moves: re-index the strand in the new sorted list
                s["l"], s["fl"], s["pl"], s["j"] = x, f, p, int(np.argmin(np.abs(p - f)))
                if s["side"] == -1:
                    s["fr"] *= 0.5
                s["side"] = -1
            else:
                s["r"], s["fr"] = x, f
                if s["side"] == 1:
                    s["fl"] *= 0.5
                s["side"] = 1
            if s["r"] - s["l"] <= lambda_tol * max(1.0, abs(x)) or abs(f) < 1e-14:
                s["done"] = True
                s["root"] = x
    else:
        raise OracleError("root refinement did not converge")
    return [(s["root"], s["r"] - s["l"]) for s in work]


# -- finite differences ---------------------------------------------------------

def _inv_sqrt(M):
    w, Q = np.linalg.eigh(M)
    return (Q * (1.0 / np.sqrt(w))[..., None, :]) @ dagger(Q)


def _cluster(vals, tol):
    eigs, mults = [], []
    for v in np.sort(vals):
        if eigs and abs(v - eigs[-1]) <= tol * max(1.0, abs(v)):
            n = mults[-1]
            eigs[-1] = (eigs[-1] * n + v) / (n + 1)
            mults[-1] += 1
        else:
            eigs.append(v)
            mults.append(1)
    return np.array(eigs), np.array(mults, dtype=int)


def _fd_eigs(P, Q, R, a, b, n, m, lambda_range, n_eigs):
    h = (b - a) / n
    x = a + h * np.arange(1, n)
    xh = a + h * (np.arange(n) + 0.5)
    Ph = np.asarray(P(xh), complex).reshape(n, m, m)
    Qx = np.asarray(Q(x), complex).reshape(n - 1, m, m)
    Rx = np.asarray(R(x), complex).reshape(n - 1, m, m)
    Rs = _inv_sqrt(Rx)
    diag = (Ph[1:] + Ph[:-1]) / h ** 2 + Qx
    off = -Ph[1:-1] / h ** 2
    diag = Rs @ diag @ Rs
    off = Rs[1:] @ off @ Rs[:-1]
    N = (n - 1) * m
    band = np.zeros((2 * m, N), dtype=complex)
    # lower band storage: band[i - j, j] = H[i, j]
    for blk in range(n - 1):
        for r in range(m):
            for c in range(r + 1):
                band[r - c, blk * m + c] = diag[blk, r, c]
    for blk in range(n - 2):
        for r in range(m):
            for c in range(m):
                i, j = (blk + 1) * m + r, blk * m + c
                band[i - j, j] = off[blk, r, c]
    if np.all(band.imag == 0):
        band = band.real
    if n_eigs is not None:
        return sla.eig_banded(band, lower=True, eigvals_only=True, select="i",
                              select_range=(0, min(n_eigs, N) - 1))
    lo, hi = lambda_range
    return sla.eig_banded(band, lower=True, eigvals_only=True, select="v", select_range=(lo, hi))


def fd_schrodinger_spectrum(P, Q, R, interval, grid_n: int = 2000, *, m: int = 1, lambda_range=None,
                            n_eigs: int | None = None, accuracy: float | None = None,
                            cluster_tol: float = 1e-9) -> DiscreteSpectrum:
    """Central-difference spectrum of ``R^{-1}[-(P u')' + Q u]`` with Dirichlet ends.

    The error estimate compares with a grid of half the size (the method is
    second order, so the difference is about three times the error).  When
    ``accuracy`` is given and the estimate exceeds it the call fails.
    """
    a, b = map(float, interval)
    if grid_n < 8:
        raise OracleError("grid_n must be at least 8")
    if lambda_range is None and n_eigs is None:
        raise OracleError("give lambda_range or n_eigs")
    vals = _fd_eigs(P, Q, R, a, b, grid_n, m, lambda_range, n_eigs)
    coarse = _fd_eigs(P, Q, R, a, b, grid_n // 2, m, lambda_range, n_eigs if n_eigs is None else len(vals))
    err = np.full(len(vals), np.nan)
    k = min(len(vals), len(coarse))
    err[:k] = np.abs(vals[:k] - coarse[:k]) / 3.0
    est = float(np.nanmax(err)) if len(vals) else 0.0
    if accuracy is not None and est > accuracy:
        raise OracleError(f"grid_n={grid_n} too small: estimated error {est:.1e} > {accuracy:.1e}")
    eigs, mults = _cluster(vals, cluster_tol)
    return DiscreteSpectrum("finite-difference", (a, b), eigs, mults, {"alpha": "dirichlet", "beta": "dirichlet"},
                            {"grid_n": grid_n, "h": (b - a) / grid_n, "error_estimate": est,
                             "lambda_tol": est})


# -- Nystrom discretization of the restricted resolvent -------------------------

@dataclass(eq=False)
class ResolventSample:
    lambda0: float
    nodes: np.ndarray
    weights: np.ndarray
    matrix: np.ndarray
    eigenvalues: np.ndarray
    hermitian_residual: float

    def mapped_eigenvalues(self, threshold: float = 1e-3) -> np.ndarray:
        """``lambda0 + 1/mu`` for the eigenvalues with ``|mu| > threshold``."""
        mu = self.eigenvalues[np.abs(self.eigenvalues) > threshold]
        return np.sort(self.lambda0 + 1.0 / mu)

    def top(self, k: int) -> np.ndarray:
        idx = np.argsort(-np.abs(self.eigenvalues))[:k]
        return np.sort(self.eigenvalues[idx])


def nystrom_resolvent_spectrum(sys: HamiltonianSystem, lambda0: float, alpha=None, beta=None,
                               interval=None, grid: int = 800, *,
                               ctrl: StepControl = StepControl()) -> ResolventSample:
    """Eigenvalues of a quadrature discretization of the restricted resolvent.

    The kernel is the top-left ``r x r`` block of the Green's kernel at
    ``lambda0``.  It is sampled on a uniform grid and weighted by the
    composite trapezoid rule; on the diagonal, where the kernel has a kink
    (or a jump when ``r = 2m``), the mean of the one-sided limits is used,
    which keeps the rule second order.  The matrix is symmetrized with
    ``W^{1/2}`` and the square roots of the weights, so it is Hermitian when
    the operator is self-adjoint.
    """
    fsys = _finite(sys, interval)
    m, r = fsys.m, fsys.r
    alpha = dirichlet(m) if alpha is None else alpha
    lam = float(lambda0)
    a, b = fsys.geometry.a, fsys.geometry.b
    minus = weyl_minus(fsys, lam, alpha, ctrl=ctrl)
    plus = weyl_plus(fsys, lam, beta=beta, ctrl=ctrl)
    try:
        K = GreensKernel(complex(lam), minus, plus, minus, plus, 0.5 * (a + b))
    except WeylError as exc:
        raise OracleError(f"lambda0={lam} is within the singularity tolerance of an eigenvalue") from exc
    x = np.linspace(a, b, grid + 1)
    w = np.full(grid + 1, (b - a) / grid)
    w[[0, -1]] *= 0.5
    Pm = K.psi_minus(x)[:, :r, :]
    Pp = K.psi_plus(x)[:, :r, :]
    L = np.einsum("iam,mn,jbn->iajb", Pm, K._W1inv, Pp.conj())
    Rt = np.einsum("iam,mn,jbn->iajb", Pp, K._W2inv, Pm.conj())
    i, j = np.meshgrid(np.arange(len(x)), np.arange(len(x)), indexing="ij")
    sel = (i < j)[:, None, :, None]
    Kmat = np.where(sel, L, Rt)
    diag = np.arange(len(x))
    Kmat[diag, :, diag, :] = 0.5 * (L[diag, :, diag, :] + Rt[diag, :, diag, :])
    Wx = np.asarray(fsys.W(x), complex)
    Ws = np.linalg.cholesky(Wx)  # W = Ws Ws^*
    # M = sqrt(w_i) Ws_i^* K_ij Ws_j sqrt(w_j)
    M = np.einsum("iba,ibjc,jcd->iajd", Ws.conj(), Kmat, Ws)
    M = M * np.sqrt(w)[:, None, None, None] * np.sqrt(w)[None, None, :, None]
    n = len(x) * r
    M = M.reshape(n, n)
    herm = float(np.linalg.norm(M - M.conj().T) / max(np.linalg.norm(M), 1e-300))
    if herm > 1e-8:
        raise OracleError(f"Nystrom matrix not Hermitian (residual {herm:.1e})")
    mu = np.linalg.eigvalsh(0.5 * (M + M.conj().T))
    return ResolventSample(lam, x, w, M, mu, herm)


# -- eigenvalue curves of truncations ------------------------------------------------

@dataclass(eq=False)
class MonotonicityTable:
    c_grid: np.ndarray
    spectra: list
    curves: list
    ambiguities: list

    def directions(self) -> list[int]:
        out = []
        for cv in self.curves:
            lam = np.array([p[1] for p in cv])
            d = np.diff(lam)
            out.append(int(np.sign(np.sum(d))) if d.size else 0)
        return out

    def max_violation(self) -> float:
        worst = 0.0
        for cv, sgn in zip(self.curves, self.directions()):
            lam = np.array([p[1] for p in cv])
            d = np.diff(lam)
            if d.size and sgn:
                worst = max(worst, float(np.max(np.maximum(-sgn * d, 0.0))))
        return worst

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["curve", "c", "lambda"])
            for k, cv in enumerate(self.curves):
                for c, lam in cv:
                    w.writerow([k, repr(float(c)), repr(float(lam))])


def monotonicity_scan(sys: HamiltonianSystem, alpha, lambda0: float, lambda_window, c_grid, *,
                      plus=None, trunc: TruncationPolicy = TruncationPolicy(),
                      ctrl: StepControl = StepControl(), resolution: int = 32,
                      match_tol: float | None = None) -> MonotonicityTable:
    """Spectra of ``(a, c)`` truncations with ``gamma(c)`` from ``Psi_+(lambda0, c)``.

    Curves are joined across consecutive ``c`` by nearest neighbours; two
    eigenvalues closer than ``match_tol`` make the pairing ambiguous and
    are reported.
    """
    c_grid = np.sort(np.asarray(c_grid, dtype=float))
    a = sys.geometry.a
    if not np.isfinite(a):
        raise OracleError("monotonicity scans need a finite left endpoint")
    alpha = dirichlet(sys.m) if alpha is None else alpha
    if plus is None:
        plus = weyl_plus(sys, lambda0, window=(a, float(c_grid[-1])), trunc=trunc, ctrl=ctrl)
    lo, hi = map(float, lambda_window)
    match_tol = 0.25 * (hi - lo) if match_tol is None else match_tol
    spectra = []
    for c in c_grid:
        Yc, _ = plus.trajectory.frames_at([c])
        gamma = boundary_from_solution(Yc[0])
        spectra.append(shooting_eigenvalues(sys, alpha, gamma, (a, c), (lo, hi), resolution, ctrl=ctrl))
    curves: list[list] = []
    open_ends: list[int] = []
    ambiguities = []
    for c, sp in zip(c_grid, spectra):
        vals = list(sp.expanded())
        if len(vals) > 1 and np.min(np.diff(vals)) < 1e-6 * max(1.0, hi - lo):
            ambiguities.append(float(c))
        used = set()
        new_open = []
        for v in vals:
            best, bd = None, match_tol
            for k in open_ends:
                if k in used:
                    continue
                d = abs(curves[k][-1][1] - v)
                if d < bd:
                    best, bd = k, d
            if best is None:
                curves.append([(float(c), float(v))])
                new_open.append(len(curves) - 1)
            else:
                curves[best].append((float(c), float(v)))
                used.add(best)
                new_open.append(best)
        open_ends = new_open
    return MonotonicityTable(c_grid, spectra, curves, ambiguities)
