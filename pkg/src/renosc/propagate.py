"""Integration of solution frames of ``Psi' = -J (z A(x) + B(x)) Psi``.

Frames are ``2m x m`` complex matrices.  The integrator is an embedded
Dormand-Prince 5(4) pair with adaptive steps that land exactly on declared
coefficient discontinuities.  It works on a *batch* of spectral parameters
at once (shape ``(nb, 2m, m)``), which is how the eigenvalue scans get their
speed; a single trajectory is a batch of one.

Whenever a frame's magnitude leaves ``[1e-6, 1e6]`` or its columns become
ill-conditioned it is replaced by the ``Q`` factor of a thin QR and the
``R`` factor is folded into an accumulated right factor, so the true
solution is always ``stored @ accumulated``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import quad_vec
# Dormand-Prince 8(5,3) coefficient tables
from scipy.integrate._ivp import dop853_coefficients as _d853

from .hamsys import HamiltonianSystem
from .linalg import (
    LinalgError,
    dagger,
    herm_funm,
    symplectic_j,
    unitary_log_branch,
)

RENORM_LO, RENORM_HI = 1e-6, 1e6
RENORM_COND = 1e4
NONDEG_PROJECT = 1e-8
NONDEG_FAIL = 1e-6

# keep stage abscissae strictly inside the step so piecewise coefficients
# are sampled on the correct side of a discontinuity
_NUDGE = 1e-9


@dataclass(frozen=True)
class _Tableau:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    E: np.ndarray
    E3: np.ndarray | None
    order: int


_DOPRI5 = _Tableau(
    A=np.array([
        [0, 0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
    ]),
    B=np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
    C=np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0]),
    E=np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40]),
    E3=None,
    order=5,
)

_DOP853 = _Tableau(
    A=_d853.A[:_d853.N_STAGES, :_d853.N_STAGES],
    B=_d853.B,
    C=_d853.C[:_d853.N_STAGES],
    E=_d853.E5,
    E3=_d853.E3,
    order=8,
)

TABLEAUS = {"dopri5": _DOPRI5, "dop853": _DOP853}


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepControl:
    rtol: float = 1e-10
    atol: float = 1e-13
    max_step: float = np.inf
    first_step: float | None = None
    max_steps: int = 200_000
    resymplectify: bool = True
    method: str = "dop853"


class SolutionFrame(NamedTuple):
    x: float
    psi: np.ndarray
    accumulated_renorm: np.ndarray


class PruferFrame(NamedTuple):
    theta: np.ndarray
    rho: np.ndarray


def _rhs(sys: HamiltonianSystem, x, Y, z, mJ):
    A, B = sys.coefficients(x)
    JA = mJ @ A
    JB = mJ @ B
    return z[:, None, None] * (JA @ Y) + JB @ Y


def _rk_step(sys, x, h, Y, z, mJ, k1=None, tab: _Tableau = _DOP853):
    """One embedded Runge-Kutta step; ``x`` and ``h`` are scalars or per-batch arrays.

    Returns the new frames, the per-element scaled-free error estimate
    components ``(err, err3)`` and the derivative at the new point (FSAL).
    """
    hb = np.asarray(h, dtype=float)
    hcol = hb[..., None, None] if hb.ndim else hb
    cs = np.clip(tab.C, _NUDGE, 1.0 - _NUDGE)
    ns = len(tab.B)
    ks = [None] * (ns + 1)
    ks[0] = _rhs(sys, x + cs[0] * hb, Y, z, mJ) if k1 is None else k1
    for i in range(1, ns):
        acc = Y
        for j in range(i):
            aij = tab.A[i, j]
            if aij != 0.0:
                acc = acc + (hcol * aij) * ks[j]
        ks[i] = _rhs(sys, x + cs[i] * hb, acc, z, mJ)
    Ynew = Y
    for j in range(ns):
        if tab.B[j] != 0.0:
            Ynew = Ynew + (hcol * tab.B[j]) * ks[j]
    ks[ns] = _rhs(sys, x + (1.0 - _NUDGE) * hb, Ynew, z, mJ)
    err = hcol * sum(e * k for e, k in zip(tab.E, ks) if e != 0.0)
    err3 = None
    if tab.E3 is not None:
        err3 = hcol * sum(e * k for e, k in zip(tab.E3, ks) if e != 0.0)
    return Ynew, (err, err3), ks[ns]


def _error_norm(err, Y, Ynew, ctrl):
    e5, e3 = err
    scale = ctrl.atol + ctrl.rtol * np.maximum(
        np.max(np.abs(Y), axis=(-2, -1)), np.max(np.abs(Ynew), axis=(-2, -1)))
    n5 = np.max(np.abs(e5), axis=(-2, -1)) / scale
    if e3 is None:
        return float(np.max(n5))
    n3 = np.max(np.abs(e3), axis=(-2, -1)) / scale
    denom = np.sqrt(n5 ** 2 + 0.01 * n3 ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(denom > 0, n5 ** 2 / np.where(denom > 0, denom, 1.0), 0.0)
    return float(np.max(val))


def _stops_between(x_from, x_to, points):
    lo, hi = min(x_from, x_to), max(x_from, x_to)
    pts = sorted({float(p) for p in points if lo < p < hi})
    if x_to < x_from:
        pts = pts[::-1]
    return pts + [float(x_to)]


def _nondegeneracy(Y, mJ):
    # ||Y* J Y|| / ||Y||^2 per batch element (mJ = -J)
    G = dagger(Y) @ mJ @ Y
    return np.linalg.norm(G, axis=(-2, -1)) / np.linalg.norm(Y, axis=(-2, -1)) ** 2


def lagrangian_projection(Y: np.ndarray) -> np.ndarray:
    """Orthogonal projection of frames onto the nearest Lagrangian plane.

    The plane is built from the unitary polar factor ``U`` of
    ``V_- V_+^{-1}``: it is spanned by ``(i(U - I), -(U + I))``.
    """
    m = Y.shape[-1]
    Y1, Y2 = Y[..., :m, :], Y[..., m:, :]
    Vp = Y1 + 1j * Y2
    Vm = -Y1 + 1j * Y2
    U = Vm @ np.linalg.inv(Vp)
    P, _, Qh = np.linalg.svd(U)
    Uu = P @ Qh
    I = np.eye(m)
    F = np.concatenate([1j * (Uu - I), -(Uu + I)], axis=-2)
    Q, _ = np.linalg.qr(F)
    return Q @ (dagger(Q) @ Y)


def integrate_batch(sys: HamiltonianSystem, zs, x_from: float, x_to: float, Y0,
                    ctrl: StepControl = StepControl(), *, stops=(), record: bool = True):
    """Integrate a batch of frames from ``x_from`` to ``x_to``.

    Returns ``(xs, frames, accs, hs, errs, n_proj, log_scales)``; the true
    right factor at a node is ``accs * exp(log_scales)``, the unit-norm
    ``accs`` keeping long growing spans finite.  With ``record=False`` only
    the endpoint is kept in ``xs``/``frames``/``accs``/``log_scales``.
    """
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    Y = np.array(Y0, dtype=complex, copy=True)
    if Y.ndim == 2:
        Y = np.broadcast_to(Y, (zs.size,) + Y.shape).copy()
    nb, n2, m = Y.shape
    if n2 != 2 * sys.m or m != sys.m:
        raise IntegrationError(f"frame shape {Y.shape[1:]} does not match m={sys.m}")
    if x_from == x_to:
        raise IntegrationError("x_from == x_to")
    geom = sys.geometry
    if not (geom.contains(x_from) and geom.contains(x_to)):
        raise IntegrationError(f"[{x_from}, {x_to}] leaves {geom}")
    mJ = -symplectic_j(sys.m)
    tab = TABLEAUS[ctrl.method]
    expo = -1.0 / tab.order
    real_z = bool(np.all(np.abs(zs.imag) == 0.0))
    resym = ctrl.resymplectify and real_z
    if resym:
        drift = _nondegeneracy(Y, mJ)
        if np.any(drift > NONDEG_FAIL):
            raise IntegrationError("initial frame is degenerate (Psi* J Psi != 0)")
    if np.any(np.linalg.svd(Y, compute_uv=False)[:, -1] <= 1e-12 * np.linalg.norm(Y, axis=(-2, -1))):
        raise IntegrationError("initial frame is rank deficient")

    direction = 1.0 if x_to > x_from else -1.0
    span = abs(x_to - x_from)
    acc = np.broadcast_to(np.eye(m, dtype=complex), (nb, m, m)).copy()
    targets = _stops_between(x_from, x_to, list(sys.breakpoints) + list(stops))
    h = ctrl.first_step or min(span / 64.0, 0.05, ctrl.max_step)
    x = float(x_from)
    logs = np.zeros(nb)
    xs, frames, accs, hs, errs, scales = [x], [Y.copy()], [acc.copy()], [], [], [logs.copy()]
    k1 = None
    n_proj = 0
    n_steps = 0
    for target in targets:
        while direction * (target - x) > 0:
            n_steps += 1
            if n_steps > ctrl.max_steps:
                raise IntegrationError(f"exceeded {ctrl.max_steps} steps near x={x:g}")
            hmin = 1e-13 * max(1.0, abs(x))
            h = min(h, ctrl.max_step)
            last = h >= abs(target - x) - hmin
            step = abs(target - x) if last else h
            Ynew, err, klast = _rk_step(sys, x, direction * step, Y, zs, mJ, k1, tab)
            enorm = _error_norm(err, Y, Ynew, ctrl)
            if not np.isfinite(enorm):
                raise IntegrationError(f"non-finite error estimate at x={x:g}")
            if enorm > 1.0:
                h = step * max(0.2, 0.9 * enorm ** expo)
                if h < hmin:
                    raise IntegrationError(
                        f"step size underflow at x={x:g}; undeclared discontinuity?")
                continue
            x = target if last else x + direction * step
            Y = Ynew
            k1 = klast
            fac = 5.0 if enorm == 0 else min(5.0, max(0.2, 0.9 * enorm ** expo))
            h = step * fac if not last else max(h, step * fac)

            if resym:
                drift = _nondegeneracy(Y, mJ)
                if np.any(drift > NONDEG_FAIL):
                    raise IntegrationError(f"nondegeneracy lost at x={x:g} (drift {drift.max():.2e})")
                bad = drift > NONDEG_PROJECT
                if np.any(bad):
                    Y[bad] = lagrangian_projection(Y[bad])
                    n_proj += int(bad.sum())
                    k1 = None
            mag = np.max(np.abs(Y), axis=(-2, -1))
            renorm = (mag < RENORM_LO) | (mag > RENORM_HI)
            if m > 1:
                sv = np.linalg.svd(Y, compute_uv=False)
                renorm |= sv[:, 0] > RENORM_COND * sv[:, -1]
            if np.any(renorm):
                Q, R = np.linalg.qr(Y[renorm])
                Y[renorm] = Q
                grown = R @ acc[renorm]
                size = np.linalg.norm(grown, axis=(-2, -1))
                acc[renorm] = grown / size[:, None, None]
                logs[renorm] += np.log(size)
                if k1 is not None:
                    k1 = k1.copy()
                    k1[renorm] = k1[renorm] @ np.linalg.inv(R)
            if record:
                xs.append(x)
                frames.append(Y.copy())
                accs.append(acc.copy())
                scales.append(logs.copy())
                hs.append(step)
                errs.append(enorm)
        # landing on a breakpoint: derivative may jump
        k1 = None
    if not record:
        return (np.array([x]), Y[None], acc[None], np.array(hs), np.array(errs), n_proj,
                logs[None])
    return (np.array(xs), np.stack(frames), np.stack(accs), np.array(hs),
            np.array(errs), n_proj, np.stack(scales))


@dataclass(eq=False)
class Trajectory:
    system: HamiltonianSystem
    z: complex
    xs: np.ndarray
    frames: np.ndarray
    accs: np.ndarray
    step_sizes: np.ndarray
    error_estimates: np.ndarray
    ctrl: StepControl = field(default_factory=StepControl)
    n_projections: int = 0
    log_scales: np.ndarray | None = None

    def __post_init__(self):
        if self.log_scales is None:
            self.log_scales = np.zeros(len(self.xs))

    @property
    def direction(self) -> float:
        return 1.0 if self.xs[-1] > self.xs[0] else -1.0

    @property
    def lo(self) -> float:
        return float(min(self.xs[0], self.xs[-1]))

    @property
    def hi(self) -> float:
        return float(max(self.xs[0], self.xs[-1]))

    def __len__(self):
        return len(self.xs)

    def frame(self, i: int) -> SolutionFrame:
        return SolutionFrame(float(self.xs[i]), self.frames[i], self.accs[i] * np.exp(self.log_scales[i]))

    def covers(self, lo: float, hi: float) -> bool:
        eps = 1e-12 * max(1.0, abs(lo), abs(hi))
        return self.lo - eps <= lo and hi <= self.hi + eps

    def _locate(self, x):
        d = self.direction
        key = d * self.xs
        k = np.searchsorted(key, d * x, side="right") - 1
        return np.clip(k, 0, len(self.xs) - 2)

    def frames_at(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Frames (stored normalization) and unit-norm accumulated factors at ``x``.

        The factors omit the scalar growth kept in ``log_scales``; use
        :meth:`true_frames` with ``ref`` for products across nodes.

        Off-node values come from one sub-step of the integrator started at
        the preceding node; the sub-step is shorter than the accepted step,
        so the local error stays within the step-control tolerance.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        eps = 1e-12 * max(1.0, np.max(np.abs(x)))
        if np.any(x < self.lo - eps) or np.any(x > self.hi + eps):
            raise IntegrationError(
                f"requested points outside trajectory coverage [{self.lo}, {self.hi}]")
        x = np.clip(x, self.lo, self.hi)
        k = self._locate(x)
        h = x - self.xs[k]
        Y = self.frames[k].copy()
        acc = self.accs[k].copy()
        exact = np.abs(h) <= 1e-14 * np.maximum(1.0, np.abs(x))
        nxt = np.abs(x - self.xs[k + 1]) <= 1e-14 * np.maximum(1.0, np.abs(x))
        Y[nxt] = self.frames[k[nxt] + 1]
        acc[nxt] = self.accs[k[nxt] + 1]
        todo = ~(exact | nxt)
        if np.any(todo):
            mJ = -symplectic_j(self.system.m)
            zs = np.full(int(todo.sum()), self.z, dtype=complex)
            Ynew, _, _ = _rk_step(self.system, self.xs[k[todo]], h[todo], Y[todo], zs, mJ,
                                  tab=TABLEAUS[self.ctrl.method])
            Y[todo] = Ynew
        return Y, acc

    def spans_at(self, x) -> np.ndarray:
        """Orthonormal bases of the frame column spans at ``x``."""
        Y, _ = self.frames_at(x)
        Q, _ = np.linalg.qr(Y)
        return Q

    def true_frames(self, x, ref: float | None = None) -> np.ndarray:
        """Unrenormalized solution values; with ``ref`` the normalization is
        relative to the frame at ``ref`` (avoids overflow on long spans)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        Y, acc = self.frames_at(x)
        logs = self.log_scales_at(x)
        if ref is None:
            return (Y @ acc) * np.exp(logs)[:, None, None]
        _, acc_ref = self.frames_at([ref])
        rel = np.exp(logs - self.log_scales_at([ref])[0])
        return (Y @ (acc @ np.linalg.inv(acc_ref[0]))) * rel[:, None, None]

    def log_scales_at(self, x) -> np.ndarray:
        """Log of the scalar growth split off the accumulated factor at ``x``."""
        x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), self.lo, self.hi)
        k = self._locate(x)
        out = self.log_scales[k].copy()
        nxt = np.abs(x - self.xs[k + 1]) <= 1e-14 * np.maximum(1.0, np.abs(x))
        out[nxt] = self.log_scales[k[nxt] + 1]
        return out

    def nondegeneracy_residuals(self) -> np.ndarray:
        return _nondegeneracy(self.frames, -symplectic_j(self.system.m))

    def frame_identity_residuals(self) -> np.ndarray:
        """Residual of ``P G^{-1} P* - J P G^{-1} P* J - I`` at every node."""
        J = symplectic_j(self.system.m)
        P = self.frames
        G = dagger(P) @ P
        X = P @ np.linalg.solve(G, dagger(P))
        R = X - J @ X @ J - np.eye(2 * self.system.m)
        return np.linalg.norm(R, axis=(-2, -1))

    def prufer_phases(self) -> np.ndarray:
        """Eigenphases of the Pruefer angle at each node, tracked continuously."""
        out = []
        theta = None
        for Y in self.frames:
            pf = prufer_decompose(Y, theta)
            theta = pf.theta
            out.append(np.linalg.eigvalsh(theta))
        return np.array(out)

    def to_csv(self, path) -> None:
        m = self.system.m
        phases = self.prufer_phases() if abs(self.z.imag) == 0 else None
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["x"]
            for i in range(2 * m):
                for j in range(m):
                    head += [f"re_psi_{i}{j}", f"im_psi_{i}{j}"]
            head += ["smin_gram"] + [f"theta_eig_{j}" for j in range(m)]
            w.writerow(head)
            for n, x in enumerate(self.xs):
                Y = self.frames[n]
                row = [repr(float(x))]
                for i in range(2 * m):
                    for j in range(m):
                        row += [repr(float(Y[i, j].real)), repr(float(Y[i, j].imag))]
                row.append(repr(float(np.linalg.eigvalsh(dagger(Y) @ Y)[0])))
                row += [repr(float(v)) for v in (phases[n] if phases is not None else [np.nan] * m)]
                w.writerow(row)


def integrate_frame(sys: HamiltonianSystem, z: complex, from_x: float, to_x: float,
                    initial, ctrl: StepControl = StepControl(), *, stops=()) -> Trajectory:
    """Adaptive solution of the system from ``initial`` at ``from_x`` to ``to_x``."""
    Y0 = np.asarray(initial, dtype=complex)
    if Y0.ndim == 1:
        Y0 = Y0[:, None]
    xs, F, Acc, hs, errs, n_proj, logs = integrate_batch(
        sys, [z], from_x, to_x, Y0[None], ctrl, stops=stops)
    return Trajectory(sys, complex(z), xs, F[:, 0], Acc[:, 0], hs, errs, ctrl, n_proj, logs[:, 0])


def detector_unitary(Y: np.ndarray) -> np.ndarray:
    """``U = V_- V_+^{-1}`` with ``V_pm = (+-I, iI) Psi`` (works on stacks)."""
    m = Y.shape[-1]
    Y1, Y2 = Y[..., :m, :], Y[..., m:, :]
    Vp = Y1 + 1j * Y2
    Vm = -Y1 + 1j * Y2
    # U = Vm Vp^{-1}  <=>  U^T = Vp^{-T} Vm^T
    Ut = np.linalg.solve(np.swapaxes(Vp, -1, -2), np.swapaxes(Vm, -1, -2))
    return np.swapaxes(Ut, -1, -2)


def prufer_decompose(psi, theta_prev=None, *, nondeg_tol: float = 1e-8) -> PruferFrame:
    """Hermitian angle and invertible radius with ``psi = (sin t, cos t)^T rho``."""
    psi = np.asarray(psi, dtype=complex)
    if psi.ndim == 1:
        psi = psi[:, None]
    m = psi.shape[1]
    if psi.shape[0] != 2 * m:
        raise LinalgError(f"frame must be 2m x m, got {psi.shape}")
    J = symplectic_j(m)
    nrm2 = np.linalg.norm(psi, 2) ** 2
    if np.linalg.norm(psi.conj().T @ J @ psi, 2) > nondeg_tol * nrm2:
        raise LinalgError("frame is not Lagrangian (Psi* J Psi != 0)")
    Vp = psi[:m] + 1j * psi[m:]
    sv = np.linalg.svd(Vp, compute_uv=False)
    if sv[-1] <= 1e-13 * np.sqrt(nrm2):
        raise LinalgError(f"V+ numerically singular (cond {sv[0] / max(sv[-1], 1e-300):.2e})")
    U = detector_unitary(psi)
    # remove rounding from the unitary before taking its logarithm
    P, _, Qh = np.linalg.svd(U)
    theta = unitary_log_branch(P @ Qh, theta_prev)
    s = herm_funm(theta, np.sin)
    c = herm_funm(theta, np.cos)
    rho = s @ psi[:m] + c @ psi[m:]
    return PruferFrame(theta, rho)


def inner_product_A(sys: HamiltonianSystem, F: Callable, G: Callable, lo: float, hi: float,
                    *, epsrel: float = 1e-10, epsabs: float = 0.0, points=None):
    """``int_lo^hi F(x)* A(x) G(x) dx`` by adaptive Gauss-Kronrod quadrature.

    ``F`` and ``G`` map a point to a ``2m`` vector or a ``2m x k`` matrix.
    """
    if hi <= lo:
        raise IntegrationError("empty integration interval")

    def integrand(x):
        Fx = np.asarray(F(x), dtype=complex)
        Gx = np.asarray(G(x), dtype=complex)
        return Fx.conj().T @ sys.A(x) @ Gx

    bps = [p for p in (points if points is not None else sys.breakpoints) if lo < p < hi]
    val, _ = quad_vec(integrand, lo, hi, epsrel=epsrel, epsabs=epsabs,
                      points=bps or None, norm="max", limit=20000)
    return val


def gauss_panels(lo: float, hi: float, n_panels: int, order: int = 8, breakpoints=()):
    """Composite Gauss-Legendre nodes and weights (panels split at breakpoints)."""
    edges = np.linspace(lo, hi, n_panels + 1)
    edges = np.unique(np.concatenate([edges, [p for p in breakpoints if lo < p < hi]]))
    t, w = np.polynomial.legendre.leggauss(order)
    mids = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    xs = (mids[:, None] + half[:, None] * t[None, :]).ravel()
    ws = (half[:, None] * w[None, :]).ravel()
    return xs, ws, edges


def integrate_frames(sys: HamiltonianSystem, zs, from_x: float, to_x: float, initial,
                     ctrl: StepControl = StepControl(), *, stops=()) -> list[Trajectory]:
    """Batched :func:`integrate_frame`; the trajectories share one node grid."""
    zs = np.atleast_1d(np.asarray(zs, dtype=complex))
    Y0 = np.asarray(initial, dtype=complex)
    if Y0.ndim == 1:
        Y0 = Y0[:, None]
    xs, F, Acc, hs, errs, n_proj, logs = integrate_batch(sys, zs, from_x, to_x, Y0, ctrl, stops=stops)
    return [Trajectory(sys, complex(z), xs, F[:, i], Acc[:, i], hs, errs, ctrl, n_proj, logs[:, i])
            for i, z in enumerate(zs)]
