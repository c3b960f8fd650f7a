"""Renormalized oscillation counts from Wronskians of Weyl solutions.

The Wronskian ``Psi_+(lambda0, x)* J Psi_-(lambda1, x)`` is rank deficient
exactly where the two Lagrangian planes intersect.  Intersections are found
through the unitary detector ``Omega = U_+^* U_-`` (``U = V_- V_+^{-1}`` for
each frame): ``dim ker(Omega - I)`` equals the intersection dimension, and
the eigenphases of ``Omega`` move smoothly in ``x`` while singular values
do not.  Every eigenphase strand that passes through 0 marks a candidate;
candidates are bisected and their multiplicity is read off an SVD of the
span-normalized Wronskian.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .hamsys import FINITE, FULL_LINE, HALF_LINE, HamiltonianSystem, atkinson_check, dirichlet
from .linalg import dagger, nullity, symplectic_j
from .propagate import StepControl, detector_unitary, inner_product_A
from .weyl import (
    TruncationPolicy,
    WeylSolution,
    weyl_left_batch,
    weyl_minus_batch,
    weyl_plus_batch,
)

RANK_TOL = 1e-8
MAX_MOTION = np.pi / 4
EIGEN_PROXIMITY_TOL = 1e-8


class OscillationError(RuntimeError):
    pass


class EigenvalueProximityError(OscillationError):
    """A spectral endpoint is numerically an eigenvalue."""


class WindowNotStableError(OscillationError):
    pass


class CounterRotationWarning(UserWarning):
    pass


class FrameSource(Protocol):
    def frames_at(self, x) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class ConstantFrame:
    """A fixed Lagrangian plane, e.g. the Dirichlet reference of classical counting."""

    frame: np.ndarray

    def frames_at(self, x):
        x = np.atleast_1d(x)
        m = self.frame.shape[1]
        Y = np.broadcast_to(self.frame, (len(x),) + self.frame.shape).copy()
        return Y, np.broadcast_to(np.eye(m, dtype=complex), (len(x), m, m)).copy()


def _source(s):
    return s.trajectory if isinstance(s, WeylSolution) else s


def _orth(Y):
    Q, _ = np.linalg.qr(Y)
    return Q


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _aligned(p0, p1):
    """Cyclic shift pairing eigenphase lists with the least maximal motion.

    Returns the wrapped motion and ``p1`` reordered to line up with ``p0``.
    """
    m = p0.shape[-1]
    best, best_cost = None, np.inf
    for s in range(m):
        q = np.roll(p1, -s)
        d = _wrap(q - p0)
        cost = np.max(np.abs(d))
        if cost < best_cost:
            best, best_cost = (d, q), cost
    return best


def _match(p0, p1):
    return _aligned(p0, p1)[0]


def _crossings(p0, d, p1=None):
    """Strands passing through phase 0 (not through pi) between samples.

    Signs are read from the sampled endpoint ``p1`` when given, so a phase
    landing exactly on 0 is not lost to rounding in ``p0 + d``.
    """
    p1 = p0 + d if p1 is None else p1
    up = int(np.sum((p0 < 0) & (p1 >= 0) & (d > 0)))
    down = int(np.sum((p0 >= 0) & (p1 < 0) & (d < 0)))
    return up, down


class _Pair:
    """Evaluates both frames, detector phases and normalized Wronskians."""

    def __init__(self, plus: FrameSource, minus: FrameSource, m: int):
        self.plus = plus
        self.minus = minus
        self.J = symplectic_j(m)

    def eval(self, xs):
        xs = np.atleast_1d(np.asarray(xs, float))
        Qp = _orth(self.plus.frames_at(xs)[0])
        Qm = _orth(self.minus.frames_at(xs)[0])
        Om = dagger(detector_unitary(Qp)) @ detector_unitary(Qm)
        ev = np.linalg.eigvals(Om)
        ph = np.sort(np.angle(ev), axis=-1)
        W = dagger(Qp) @ self.J @ Qm
        return ph, W, Qp, Qm

    def phases(self, xs):
        return self.eval(xs)[0]


@dataclass(frozen=True)
class CrossingEvent:
    x_star: float
    nullity: int
    kernel_basis: np.ndarray
    kernel_vectors: np.ndarray
    localization_width: float
    strands_up: int = 0
    strands_down: int = 0
    tangential: bool = False

    @property
    def counter_rotating(self) -> bool:
        return self.strands_down > 0

    def to_dict(self):
        return {"x_star": self.x_star, "nullity": self.nullity,
                "localization_width": self.localization_width,
                "strands_up": self.strands_up, "strands_down": self.strands_down,
                "tangential": self.tangential}


@dataclass(eq=False)
class WronskianTrace:
    grid: np.ndarray
    wronskian: np.ndarray
    singulars: np.ndarray
    phases: np.ndarray
    window: tuple
    orientation: int
    pair: _Pair = field(repr=False)
    rank_tol: float = RANK_TOL

    def to_csv(self, path) -> None:
        m = self.phases.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x"] + [f"sigma_{j}" for j in range(m)] + [f"phase_{j}" for j in range(m)])
            for x, s, p in zip(self.grid, self.singulars, self.phases):
                w.writerow([repr(float(x))] + [repr(float(v)) for v in s] + [repr(float(v)) for v in p])

    def detector_mismatch(self) -> float:
        """Largest gap between Wronskian singular values and ``|sin(phi/2)|``.

        For span-normalized Lagrangian frames the two lists coincide, which
        is the quantitative form of ``nullity(W) = dim ker(Omega - I)``.
        """
        s = np.sort(self.singulars, axis=-1)
        t = np.sort(np.abs(np.sin(self.phases / 2)), axis=-1)
        return float(np.max(np.abs(s - t)))

    def nullity_mismatches(self) -> int:
        n_w = np.sum(self.singulars <= self.rank_tol, axis=-1)
        n_o = np.sum(np.abs(np.sin(self.phases / 2)) <= self.rank_tol, axis=-1)
        return int(np.sum(n_w != n_o))


def wronskian_trace(plus, minus, window, *, orientation: int = 1, rank_tol: float = RANK_TOL,
                    max_motion: float = MAX_MOTION, max_rounds: int = 40,
                    min_samples: int = 17) -> WronskianTrace:
    """Sample the Wronskian and detector on a grid refined until consecutive
    eigenphase motion stays below ``max_motion``.

    ``plus`` and ``minus`` are Weyl solutions, trajectories or constant
    frames.  The grid starts from their integration nodes plus
    ``min_samples`` uniform points, so a phase that returns to its start
    value across the window is still resolved.  ``orientation`` is ``sign(lambda1 - lambda0)`` and fixes which
    rotation direction is the regular one.
    """
    lo, hi = map(float, window)
    ps, ms = _source(plus), _source(minus)
    for s, nm in ((ps, "plus"), (ms, "minus")):
        if hasattr(s, "covers") and not s.covers(lo, hi):
            raise OscillationError(f"{nm} trajectory [{s.lo}, {s.hi}] does not cover window [{lo}, {hi}]")
    m = ps.frames_at([lo])[0].shape[-1]
    pair = _Pair(ps, ms, m)
    nodes = [np.linspace(lo, hi, max(2, min_samples))]
    for s in (ps, ms):
        if hasattr(s, "xs"):
            nodes.append(s.xs[(s.xs > lo) & (s.xs < hi)])
    grid = np.unique(np.concatenate(nodes))
    ph = pair.phases(grid)
    min_dx = 1e-12 * max(1.0, hi - lo)
    for _ in range(max_rounds):
        d = np.array([np.max(np.abs(_match(ph[i], ph[i + 1]))) for i in range(len(grid) - 1)])
        bad = np.flatnonzero((d >= max_motion) & (np.diff(grid) > min_dx))
        if bad.size == 0:
            break
        mids = 0.5 * (grid[bad] + grid[bad + 1])
        pm = pair.phases(mids)
        grid = np.concatenate([grid, mids])
        ph = np.concatenate([ph, pm])
        order = np.argsort(grid)
        grid, ph = grid[order], ph[order]
    else:
        raise OscillationError("detector phase refinement did not converge")
    ph, W, _, _ = pair.eval(grid)
    sv = np.linalg.svd(W, compute_uv=False)
    return WronskianTrace(grid, W, sv, ph, (lo, hi), int(np.sign(orientation) or 1), pair, rank_tol)


def _bisect(pair, xl, pl, xr, pr, xtol, out):
    d, pr_aligned = _aligned(pl, pr)
    up, down = _crossings(pl, d, pr_aligned)
    if up + down == 0:
        return
    if xr - xl <= xtol:
        out.append((xl, xr, up, down))
        return
    if up + down == 1 and np.max(np.abs(d)) < 0.5 * MAX_MOTION:
        # a lone strand moving slowly: its phase is smooth, so Brent beats halving
        j = int(np.argmin(np.abs(pl + 0.5 * d)))
        if (pl[j] < 0) != (pr_aligned[j] < 0):
            x = _strand_root(pair, xl, pl, xr, pr_aligned, j, xtol)
            out.append((x, x, up, down))
            return
    xm = 0.5 * (xl + xr)
    pm = pair.phases([xm])[0]
    _bisect(pair, xl, pl, xm, pm, xtol, out)
    _bisect(pair, xm, pm, xr, pr, xtol, out)


def _strand_root(pair, xl, pl, xr, pr, j, xtol):
    """Zero of eigenphase ``j`` on ``[xl, xr]``, following it by alignment."""

    def f(x):
        if x == xl:
            return pl[j]
        if x == xr:
            return pr[j]
        d, p = _aligned(pl, pair.phases([x])[0])
        return pl[j] + d[j]

    return brentq(f, xl, xr, xtol=xtol)


def _event_at(pair, x, up, down, window, rank_tol, tangential=False):
    lo, hi = window
    ph, W, Qp, Qm = pair.eval([x])
    W = W[0]
    U, s, Vh = np.linalg.svd(W)
    k = nullity(W, rank_tol, scale=1.0)
    kv = Vh.conj().T[:, len(s) - k:] if k else np.zeros((W.shape[1], 0), complex)
    vectors = Qm[0] @ kv
    Ym = pair.minus.frames_at([x])[0][0]
    basis = np.linalg.lstsq(Ym, vectors, rcond=None)[0]
    # isolation: smallest doubling of delta at which the Wronskian regains
    # full rank on both sides (all trial offsets evaluated in one batch)
    span = hi - lo
    deltas = 1e-12 * max(1.0, span) * 2.0 ** np.arange(64)
    deltas = deltas[(deltas < span) & (x - deltas >= lo) & (x + deltas <= hi)]
    width = np.inf
    if deltas.size:
        _, Wd, _, _ = pair.eval(np.concatenate([x - deltas, x + deltas]))
        smin = np.linalg.svd(Wd, compute_uv=False)[:, -1].reshape(2, -1)
        ok = np.flatnonzero(np.all(smin > 10 * rank_tol, axis=0))
        if ok.size:
            width = float(deltas[ok[0]])
    return CrossingEvent(float(x), int(k), basis, vectors, float(width), up, down, tangential)


def detect_crossings(trace: WronskianTrace, *, xtol: float | None = None,
                     touch_tol: float = 1e-6) -> tuple[list[CrossingEvent], list[CrossingEvent]]:
    """Locate Wronskian rank drops along a trace.

    Returns ``(events, excluded)``; ``excluded`` holds crossings within
    their localization width of a window end (boundary-ambiguous under the
    open-interval convention).
    """
    lo, hi = trace.window
    span = hi - lo
    xtol = 1e-12 * max(1.0, span) if xtol is None else xtol
    pair = trace.pair
    raw = []
    for i in range(len(trace.grid) - 1):
        _bisect(pair, trace.grid[i], trace.phases[i], trace.grid[i + 1], trace.phases[i + 1], xtol, raw)
    # merge strands that cross at the same point
    merged = []
    merge_tol = max(1e-9 * span, 4 * xtol)
    for xl, xr, up, down in raw:
        xm = 0.5 * (xl + xr)
        if merged and xm - merged[-1][0] <= merge_tol:
            x0, u0, d0, n0 = merged[-1]
            merged[-1] = ((x0 * n0 + xm) / (n0 + 1), u0 + up, d0 + down, n0 + 1)
        else:
            merged.append((xm, up, down, 1))
    if trace.orientation < 0:
        merged = [(x, d, u, n) for x, u, d, n in merged]
    events = [_event_at(pair, x, up, down, trace.window, trace.rank_tol) for x, up, down, _ in merged]
    events += _tangential_touches(trace, [e.x_star for e in events], touch_tol, merge_tol)
    events.sort(key=lambda e: e.x_star)
    kept, excluded = [], []
    for e in events:
        if e.x_star - lo <= e.localization_width or hi - e.x_star <= e.localization_width:
            excluded.append(e)
        else:
            if e.nullity < 1:
                raise OscillationError(
                    f"detector crossing at x={e.x_star:.12g} not confirmed by the Wronskian rank test")
            kept.append(e)
    return kept, excluded


def _tangential_touches(trace, known, touch_tol, merge_tol):
    """Eigenphases that approach 0 without changing sign."""
    absmin = np.min(np.abs(trace.phases), axis=1)
    out = []
    for i in range(1, len(trace.grid) - 1):
        if absmin[i] > 1e-3 or absmin[i] > absmin[i - 1] or absmin[i] > absmin[i + 1]:
            continue
        a, b = trace.grid[i - 1], trace.grid[i + 1]
        if any(a - merge_tol <= x <= b + merge_tol for x in known):
            continue
        res = minimize_scalar(lambda x: float(np.min(np.abs(trace.pair.phases([x])[0]))),
                              bounds=(a, b), method="bounded", options={"xatol": 1e-12 * max(1.0, b - a)})
        if res.fun <= touch_tol:
            ev = _event_at(trace.pair, float(res.x), 0, 0, trace.window, trace.rank_tol, tangential=True)
            if ev.nullity > 0:
                out.append(ev)
    return out


# -- counting -----------------------------------------------------------------

@dataclass(frozen=True)
class WindowPolicy:
    length: float = 20.0
    growth: float = 1.5
    max_expansions: int = 4
    tail_fraction: float = 0.25
    confirmations: int = 2

    def settled(self, history) -> bool:
        """Last ``confirmations + 1`` windows agree and have crossing-free tails."""
        k = self.confirmations + 1
        tail = history[-k:]
        return (len(tail) == k and all(h["tail_free"] for h in tail)
                and len({h["total"] for h in tail}) == 1)


@dataclass(eq=False)
class CountReport:
    lambda0: float
    lambda1: float
    geometry: str
    total: int
    events: list
    excluded: list
    window: tuple
    provenance: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    plus: WeylSolution | None = field(default=None, repr=False)
    minus: WeylSolution | None = field(default=None, repr=False)
    trace: WronskianTrace | None = field(default=None, repr=False)
    solutions: dict = field(default_factory=dict, repr=False)
    boundaries: dict = field(default_factory=dict, repr=False)

    @property
    def counter_rotating(self) -> int:
        return sum(e.strands_down for e in self.events)

    def to_dict(self) -> dict:
        return {
            "lambda0": self.lambda0, "lambda1": self.lambda1, "geometry": self.geometry,
            "total": self.total, "window": list(self.window),
            "events": [e.to_dict() for e in self.events],
            "excluded": [e.to_dict() for e in self.excluded],
            "provenance": self.provenance, "warnings": list(self.warnings),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def events_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_star", "nullity", "localization_width", "strands_up", "strands_down",
                        "tangential", "excluded"])
            for e, exc in [(e, 0) for e in self.events] + [(e, 1) for e in self.excluded]:
                w.writerow([repr(e.x_star), e.nullity, repr(e.localization_width), e.strands_up,
                            e.strands_down, int(e.tangential), exc])


def wronskian_sigma(plus: WeylSolution, minus: WeylSolution, xs) -> np.ndarray:
    """Smallest singular value of the span-normalized Wronskian at ``xs``."""
    pair = _Pair(_source(plus), _source(minus), plus.trajectory.system.m)
    return np.linalg.svd(pair.eval(xs)[1], compute_uv=False)[:, -1]


def _check_not_eigen(plus, minus, lam, window, tol):
    lo, hi = window
    xs = lo + (hi - lo) * np.array([0.25, 0.5, 0.75])
    s = wronskian_sigma(plus, minus, xs)
    if np.max(s) < tol:
        raise EigenvalueProximityError(
            f"lambda={lam:.12g} lies within tolerance of an eigenvalue "
            f"(normalized Wronskian sigma_min {np.max(s):.1e}); move the endpoint")
    return float(np.max(s))


def _count_once(plus, minus, window, orientation, rank_tol):
    trace = wronskian_trace(plus, minus, window, orientation=orientation, rank_tol=rank_tol)
    events, excluded = detect_crossings(trace)
    return trace, events, excluded


def _tail_free(events, excluded, window, frac, sides):
    lo, hi = window
    span = hi - lo
    for e in list(events) + list(excluded):
        if "right" in sides and e.x_star > hi - frac * span:
            return False
        if "left" in sides and e.x_star < lo + frac * span:
            return False
    return True


def _finish(report: CountReport) -> CountReport:
    n_ccw = report.counter_rotating
    if n_ccw:
        msg = (f"{n_ccw} counter-rotating detector crossing(s) in ({report.lambda0}, {report.lambda1}); "
               f"counted by kernel dimension")
        report.warnings.append(msg)
        warnings.warn(msg, CounterRotationWarning, stacklevel=3)
    return report


def count_renormalized(sys: HamiltonianSystem, lambda0: float, lambda1: float, alpha=None, beta=None, *,
                       window: WindowPolicy = WindowPolicy(), trunc: TruncationPolicy = TruncationPolicy(),
                       ctrl: StepControl = StepControl(), rank_tol: float = RANK_TOL,
                       proximity_tol: float = EIGEN_PROXIMITY_TOL) -> CountReport:
    """Number of eigenvalues in ``(lambda0, lambda1)`` (with geometric multiplicity).

    Sums ``dim ker Psi_+(lambda0, x)* J Psi_-(lambda1, x)`` over the open
    interval.  ``alpha`` is the left boundary condition (finite left end),
    ``beta`` the right one on a finite interval.  Infinite ends are handled
    by growing windows until the total and crossing-free tails settle.
    """
    lambda0, lambda1 = float(lambda0), float(lambda1)
    if not lambda0 < lambda1:
        raise OscillationError(f"need lambda0 < lambda1, got ({lambda0}, {lambda1})")
    kind = sys.geometry.kind
    lams = [lambda0, lambda1]
    if kind != FULL_LINE:
        alpha = dirichlet(sys.m) if alpha is None else alpha
    if kind == FINITE:
        a, b = sys.geometry.a, sys.geometry.b
        minus = weyl_minus_batch(sys, lams, alpha, ctrl=ctrl)
        plus = weyl_plus_batch(sys, lams, beta=beta, ctrl=ctrl)
        sig = [_check_not_eigen(plus[i], minus[i], lams[i], (a, b), proximity_tol) for i in range(2)]
        trace, events, excluded = _count_once(plus[0], minus[1], (a, b), 1, rank_tol)
        rep = CountReport(lambda0, lambda1, kind, sum(e.nullity for e in events), events, excluded,
                          (a, b), {"windows": [[a, b]], "totals": [sum(e.nullity for e in events)],
                                   "wronskian_sigma": sig},
                          plus=plus[0], minus=minus[1], trace=trace,
                          solutions={"plus": plus, "minus": minus},
                          boundaries={"alpha": alpha, "beta": dirichlet(sys.m) if beta is None else beta})
        return _finish(rep)

    history = []
    sig = None
    for k in range(window.max_expansions + 1):
        L = window.length * window.growth ** k
        if kind == HALF_LINE:
            a = sys.geometry.a
            win = (a, a + L)
            minus = weyl_minus_batch(sys, lams, alpha, to_x=win[1], ctrl=ctrl)
            plus = weyl_plus_batch(sys, lams, window=win, trunc=trunc, ctrl=ctrl)
            sides = ("right",)
        else:
            win = (sys.x0 - L, sys.x0 + L)
            minus = weyl_left_batch(sys, lams, window=win, trunc=trunc, ctrl=ctrl)
            plus = weyl_plus_batch(sys, lams, window=win, trunc=trunc, ctrl=ctrl)
            sides = ("left", "right")
        if sig is None:
            sig = [_check_not_eigen(plus[i], minus[i], lams[i], win, proximity_tol) for i in range(2)]
        trace, events, excluded = _count_once(plus[0], minus[1], win, 1, rank_tol)
        total = sum(e.nullity for e in events)
        tail_ok = _tail_free(events, excluded, win, window.tail_fraction, sides)
        history.append({"window": list(win), "total": total, "tail_free": tail_ok,
                        "truncation_error": max(plus[0].truncation_error_estimate,
                                                minus[1].truncation_error_estimate)})
        if window.settled(history):
            rep = CountReport(lambda0, lambda1, kind, total, events, excluded, win,
                              {"windows": history, "wronskian_sigma": sig},
                              plus=plus[0], minus=minus[1], trace=trace,
                              solutions={"plus": plus, "minus": minus},
                              boundaries={} if alpha is None else {"alpha": alpha})
            return _finish(rep)
    raise WindowNotStableError(
        f"count for ({lambda0}, {lambda1}) did not stabilize after {window.max_expansions} window "
        f"expansions: {[(h['total'], h['tail_free']) for h in history]}")


def count_classical(sys: HamiltonianSystem, lambda0: float, alpha=None, *,
                    window: WindowPolicy = WindowPolicy(), ctrl: StepControl = StepControl(),
                    rank_tol: float = RANK_TOL) -> CountReport:
    """Conjugate points of ``Psi_-(lambda0)`` against the Dirichlet plane.

    Sums the kernel dimension of the top ``m x m`` block over the open
    window; below the essential spectrum this is the number of eigenvalues
    below ``lambda0``.
    """
    if sys.r != sys.m:
        raise OscillationError("classical counting needs a Sturm-Liouville system (r = m)")
    kind = sys.geometry.kind
    if kind == FULL_LINE:
        raise OscillationError("classical counting needs a finite left endpoint")
    alpha = dirichlet(sys.m) if alpha is None else alpha
    ref = ConstantFrame(dirichlet(sys.m))
    lam = float(lambda0)
    if kind == FINITE:
        a, b = sys.geometry.a, sys.geometry.b
        minus = weyl_minus_batch(sys, [lam], alpha, ctrl=ctrl)[0]
        trace, events, excluded = _count_once(ref, minus, (a, b), 1, rank_tol)
        rep = CountReport(lam, lam, kind, sum(e.nullity for e in events), events, excluded, (a, b),
                          {"windows": [[a, b]]}, minus=minus, trace=trace,
                          solutions={"minus": [minus]}, boundaries={"alpha": alpha})
        return rep
    history = []
    a = sys.geometry.a
    for k in range(window.max_expansions + 1):
        win = (a, a + window.length * window.growth ** k)
        minus = weyl_minus_batch(sys, [lam], alpha, to_x=win[1], ctrl=ctrl)[0]
        trace, events, excluded = _count_once(ref, minus, win, 1, rank_tol)
        total = sum(e.nullity for e in events)
        tail_ok = _tail_free(events, excluded, win, window.tail_fraction, ("right",))
        history.append({"window": list(win), "total": total, "tail_free": tail_ok})
        if window.settled(history):
            return CountReport(lam, lam, kind, total, events, excluded, win, {"windows": history},
                               minus=minus, trace=trace,
                               solutions={"minus": [minus]}, boundaries={"alpha": alpha})
    raise WindowNotStableError(
        f"classical count at lambda={lam} did not stabilize; lambda may lie above the "
        f"essential spectrum infimum (infinitely many conjugate points)")


# -- glued-function orthogonality ----------------------------------------------

@dataclass(frozen=True)
class OrthogonalityResidual:
    k: int
    j: int
    l: int
    i: int
    quadrature: complex
    wronskian: complex
    relative: float
    route_gap: float


def _glued(sol: WeylSolution, x_ref: float, target: np.ndarray):
    """Coefficient vector ``c`` with ``Psi(x_ref) c = target`` (frames normalized at ``x_ref``)."""
    tr = sol.trajectory
    Yr, _ = tr.frames_at([x_ref])
    c = np.linalg.lstsq(Yr[0], target, rcond=None)[0]

    def fn(x):
        return tr.true_frames([x], ref=x_ref)[0] @ c

    return fn


def orthogonality_check(report: CountReport, plus_sol: WeylSolution | None = None,
                        minus_sol: WeylSolution | None = None, *, epsrel: float = 1e-10
                        ) -> list[OrthogonalityResidual]:
    """Inner products of glued pairs ``u+_{k,j}`` and ``u-_{l,i}``.

    ``u-`` follows the minus solution up to ``c_l`` and ``u+`` the plus
    solution from ``c_k``, both through the kernel vectors of the event.
    Each product is computed by quadrature and, independently, from the
    endpoint values of the Wronskian; both must vanish.
    """
    plus = plus_sol or report.plus
    minus = minus_sol or report.minus
    if plus is None or minus is None:
        raise OscillationError("report does not carry its Weyl solutions")
    for e in report.events:
        if e.kernel_vectors is None:
            raise OscillationError("event kernel bases unavailable")
    sys = plus.trajectory.system
    J = symplectic_j(sys.m)
    lo, hi = report.window
    dl = report.lambda1 - report.lambda0
    events = report.events
    uplus = [[_glued(plus, e.x_star, e.kernel_vectors[:, j]) for j in range(e.kernel_vectors.shape[1])]
             for e in events]
    uminus = [[_glued(minus, e.x_star, e.kernel_vectors[:, j]) for j in range(e.kernel_vectors.shape[1])]
              for e in events]

    def norm(fn, a, b):
        return float(np.sqrt(abs(inner_product_A(sys, fn, fn, a, b, epsrel=epsrel))))

    np_plus = [[norm(f, e.x_star, hi) for f in fs] for e, fs in zip(events, uplus)]
    np_minus = [[norm(f, lo, e.x_star) for f in fs] for e, fs in zip(events, uminus)]
    grams = [n * n for ns in np_plus + np_minus for n in ns]
    if grams:
        atkinson_check(sys, np.array(grams)[:, None, None])
    out = []
    for k, ek in enumerate(events):
        for j, fp in enumerate(uplus[k]):
            for l, el in enumerate(events):
                for i, fm in enumerate(uminus[l]):
                    ck, cl = ek.x_star, el.x_star
                    if ck < cl:
                        q = complex(inner_product_A(sys, fp, fm, ck, cl, epsrel=epsrel))
                        w_hi = fp(cl).conj() @ J @ fm(cl)
                        w_lo = fp(ck).conj() @ J @ fm(ck)
                        w = complex((w_hi - w_lo) / dl)
                    else:
                        q = w = 0j
                    scale = np_plus[k][j] * np_minus[l][i]
                    out.append(OrthogonalityResidual(k, j, l, i, q, w, abs(q) / scale, abs(q - w) / scale))
    return out


# -- identity checks -----------------------------------------------------------

def boundary_condition_residual(sol: WeylSolution, x: float, boundary) -> float:
    """``||b* J Psi(x)|| / ||Psi(x)||`` for a boundary matrix ``b``."""
    Y, _ = sol.trajectory.frames_at([x])
    J = symplectic_j(sol.trajectory.system.m)
    return float(np.linalg.norm(dagger(boundary) @ J @ Y[0], 2) / np.linalg.norm(Y[0], 2))


IDENTITY_TOLS = {
    "boundary": 1e-10,
    "nondegeneracy": 1e-8,
    "frame_identity": 1e-8,
    "lagrange": 1e-6,
    "wronskian_constancy": 1e-8,
    "jump": 1e-8,
    "detector": 1e-8,
}


@dataclass
class IdentityReport:
    """Worst residual per identity over every solution a report carries."""

    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=lambda: dict(IDENTITY_TOLS))
    checked: dict = field(default_factory=dict)

    def add(self, name: str, value: float) -> None:
        value = float(value)
        self.residuals[name] = max(self.residuals.get(name, 0.0), value)
        self.checked[name] = self.checked.get(name, 0) + 1

    def merge(self, other: "IdentityReport") -> "IdentityReport":
        for k, v in other.residuals.items():
            self.residuals[k] = max(self.residuals.get(k, 0.0), v)
            self.checked[k] = self.checked.get(k, 0) + other.checked[k]
        return self

    @property
    def violations(self) -> list[str]:
        return sorted(k for k, v in self.residuals.items() if not v <= self.tolerances[k])

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {k: {"residual": self.residuals[k], "tolerance": self.tolerances[k],
                    "checks": self.checked[k], "pass": self.residuals[k] <= self.tolerances[k]}
                for k in sorted(self.residuals)}


def lagrange_residual(first: WeylSolution, second: WeylSolution, lo: float, hi: float, *,
                      n_panels: int = 16, order: int = 10) -> float:
    """Relative residual of ``W(hi) - W(lo) = (z2 - conj z1) int F* A G``.

    ``W = F* J G`` with ``F``, ``G`` the two solutions, both taken relative
    to their normalization at ``lo`` so the segment may be long.  The
    integral uses composite Gauss-Legendre panels on vectorized frame
    evaluations.
    """
    from .propagate import gauss_panels

    sys = first.trajectory.system
    J = symplectic_j(sys.m)
    dz = complex(second.z) - np.conj(complex(first.z))
    xs, ws, _ = gauss_panels(lo, hi, n_panels, order, sys.breakpoints)
    pts = np.concatenate([[lo, hi], xs])
    F = first.trajectory.true_frames(pts, ref=lo)
    G = second.trajectory.true_frames(pts, ref=lo)
    Wl = dagger(F[0]) @ J @ G[0]
    Wh = dagger(F[1]) @ J @ G[1]
    integral = np.einsum("n,nij->ij", ws, dagger(F[2:]) @ sys.A(xs) @ G[2:])
    scale = max(np.linalg.norm(Wl), np.linalg.norm(Wh), abs(dz) * np.linalg.norm(integral), 1e-300)
    return float(np.linalg.norm(Wh - Wl - dz * integral) / scale)


def _sample(lo, hi, n):
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def identity_suite(report: CountReport, *, n_samples: int = 7, n_segments: int = 3) -> IdentityReport:
    """Evaluate the structural identities on everything ``report`` computed.

    Boundary matrices are checked for unitarity and the Lagrangian property;
    every trajectory for nondegeneracy and the frame identity; each
    ``(Psi_+(lambda), Psi_-(lambda))`` pair for an ``x``-independent
    Wronskian and the Green's kernel jump; the counted pair for the
    Lagrange identity on a few segments; the trace for the detector
    equivalence.
    """
    from .hamsys import validate_boundary_matrix
    from .weyl import GreensKernel

    out = IdentityReport()
    for b in report.boundaries.values():
        d = validate_boundary_matrix(b)
        out.add("boundary", max(d.unitarity, d.lagrangian, d.completeness))
    sols = [s for v in report.solutions.values() for s in v]
    for s in sols:
        tr = s.trajectory
        out.add("nondegeneracy", np.max(tr.nondegeneracy_residuals()) if np.isreal(s.z) else 0.0)
        out.add("frame_identity", np.max(tr.frame_identity_residuals()))
    lo, hi = report.window
    plus, minus = report.solutions.get("plus", []), report.solutions.get("minus", [])
    Jinv = -symplectic_j(sols[0].trajectory.system.m) if sols else None
    for p, mi in zip(plus, minus):
        plo, phi = max(lo, p.lo, mi.lo), min(hi, p.hi, mi.hi)
        x0 = 0.5 * (plo + phi)
        K = GreensKernel(complex(p.z), mi, p, mi, p, x0)
        xs = _sample(plo, phi, n_samples)
        W = K.wronskian_at(xs)
        out.add("wronskian_constancy", np.max(np.linalg.norm(W - K.W1, axis=(-2, -1))) / np.linalg.norm(K.W1))
        out.add("jump", np.max(np.linalg.norm(K.jump(xs) - Jinv, axis=(-2, -1))))
    if report.plus is not None and report.minus is not None:
        span = hi - lo
        seg = span / (4 * n_segments)
        for s in _sample(lo, hi - seg, n_segments):
            out.add("lagrange", lagrange_residual(report.plus, report.minus, s, s + seg))
    if report.trace is not None and report.plus is not None:
        out.add("detector", report.trace.detector_mismatch())
        out.add("detector", 0.0 if report.trace.nullity_mismatches() == 0 else np.inf)
    return out
