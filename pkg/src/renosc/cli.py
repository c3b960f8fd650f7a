"""Command line front end: JSON problem specs in, report files out.

A spec is one JSON document::

    {
      "schema": "renosc/1",
      "system": {"family": "schrodinger", "geometry": {"kind": "finite", "a": 0, "b": 3.14159},
                 "potential": [{"type": "polynomial", "coeffs": [0]}]},
      "boundary": {"alpha": "dirichlet"},
      "task": {"kind": "count", "lambda0": 1.5, "lambda1": 10.5},
      "numerics": {"rank_tol": 1e-8, "ode_rtol": 1e-10}
    }

Potential terms are scalar profiles (``constant``, ``polynomial``,
``cosine``, ``piecewise_constant``) multiplying the identity, one diagonal
``channel`` or an explicit Hermitian ``matrix``.  Families:

* ``schrodinger``: ``-u'' + V u`` with ``V`` from ``potential``.
* ``sturm_liouville``: ``R^{-1}[-(P u')' + Q u]`` with term lists ``P``, ``Q``, ``R``.
* ``dirac``: ``J Psi' + mass diag(I, -I) Psi + V Psi`` with ``V`` from ``potential``.

Exit codes: 0 success, 2 spec error, 3 numeric failure, 4 verification mismatch.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hamsys import (
    BOUNDARY_TOL,
    Geometry,
    HamiltonianError,
    HamiltonianSystem,
    dirichlet,
    from_dirac,
    from_sturm_liouville,
    neumann,
    schrodinger,
    validate_boundary_matrix,
)
from .linalg import LinalgError
from .oracle import OracleError, fd_schrodinger_spectrum, shooting_eigenvalues
from .oscillation import (
    OscillationError,
    WindowPolicy,
    count_renormalized,
    identity_suite,
    orthogonality_check,
)
from .propagate import IntegrationError, StepControl
from .weyl import TruncationPolicy, WeylError

SCHEMA = "renosc/1"
EXIT_OK, EXIT_SPEC, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4
FAMILIES = ("schrodinger", "sturm_liouville", "dirac")
TASKS = ("count", "spectrum", "trace", "verify")
ORTHOGONALITY_TOL = 1e-6

DEFAULT_NUMERICS = {
    "rank_tol": 1e-8,
    "ode_rtol": 1e-10,
    "ode_atol": 1e-13,
    "window": {"length": 20.0, "growth": 1.5, "max_expansions": 4, "confirmations": 2},
    "truncation": {"radius": 20.0, "growth": 1.5, "tol": 1e-8, "max_expansions": 4},
    "oracle": {"interval": None, "resolution": 64, "match_point": None},
}


class SpecError(ValueError):
    """Invalid problem spec; the message names the offending field."""


NUMERIC_ERRORS = (OscillationError, WeylError, IntegrationError, OracleError, LinalgError,
                  np.linalg.LinAlgError)


# -- parsing -------------------------------------------------------------------

def _get(d: dict, key: str, path: str, kind=None, default=...):
    if key not in d:
        if default is ...:
            raise SpecError(f"{path}.{key}: required field missing")
        return default
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise SpecError(f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _num(d: dict, key: str, path: str, default=...) -> float:
    v = _get(d, key, path, default=default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpecError(f"{path}.{key}: expected a number, got {v!r}")
    return float(v)


def _cmatrix(rows, path: str) -> np.ndarray:
    """Rows of real numbers or ``[re, im]`` pairs."""
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise SpecError(f"{path}: expected a list of rows")
    try:
        out = np.array([[complex(*e) if isinstance(e, list) else complex(e) for e in r] for r in rows])
    except (TypeError, ValueError) as exc:
        raise SpecError(f"{path}: bad matrix entry ({exc})") from None
    if out.ndim != 2:
        raise SpecError(f"{path}: rows have unequal length")
    return out


def _profile(term: dict, path: str):
    """Scalar profile ``f(x)`` and its breakpoints."""
    kind = _get(term, "type", path, str)
    if kind == "constant":
        c = _num(term, "value", path)
        return (lambda x: np.full(np.shape(x), c)), ()
    if kind == "polynomial":
        coeffs = _get(term, "coeffs", path, list)
        if not coeffs or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in coeffs):
            raise SpecError(f"{path}.coeffs: expected a non-empty list of numbers")
        p = np.polynomial.Polynomial([float(c) for c in coeffs])
        return (lambda x: p(np.asarray(x, dtype=float))), ()
    if kind == "cosine":
        amp = _num(term, "amplitude", path)
        k = _num(term, "frequency", path)
        ph = _num(term, "phase", path, 0.0)
        return (lambda x: amp * np.cos(k * np.asarray(x, dtype=float) + ph)), ()
    if kind == "piecewise_constant":
        edges = np.asarray(_get(term, "edges", path, list), dtype=float)
        vals = np.asarray(_get(term, "values", path, list), dtype=float)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise SpecError(f"{path}.edges: need at least two strictly increasing numbers")
        if len(vals) != len(edges) - 1:
            raise SpecError(f"{path}.values: need {len(edges) - 1} values for {len(edges)} edges")

        def f(x):
            x = np.asarray(x, dtype=float)
            i = np.searchsorted(edges, x, side="right") - 1
            inside = (i >= 0) & (i < len(vals))
            return np.where(inside, vals[np.clip(i, 0, len(vals) - 1)], 0.0)

        return f, tuple(float(e) for e in edges)
    raise SpecError(f"{path}.type: unknown potential term {kind!r}")


def _field(terms, n: int, path: str, default=None):
    """Matrix field ``x -> (..., n, n)`` summed from a list of terms."""
    if terms is None:
        terms = default if default is not None else []
    if not isinstance(terms, list):
        raise SpecError(f"{path}: expected a list of terms")
    parts = []
    bps: list[float] = []
    for i, t in enumerate(terms):
        p = f"{path}[{i}]"
        if not isinstance(t, dict):
            raise SpecError(f"{p}: expected an object")
        f, b = _profile(t, p)
        bps.extend(b)
        if "matrix" in t:
            M = _cmatrix(t["matrix"], f"{p}.matrix")
            if M.shape != (n, n):
                raise SpecError(f"{p}.matrix: expected {n}x{n}, got {M.shape[0]}x{M.shape[1]}")
            if np.max(np.abs(M - M.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
                raise SpecError(f"{p}.matrix: not Hermitian")
        elif "channel" in t:
            c = t["channel"]
            if isinstance(c, bool) or not isinstance(c, int) or not 0 <= c < n:
                raise SpecError(f"{p}.channel: expected an integer in [0, {n})")
            M = np.zeros((n, n), dtype=complex)
            M[c, c] = 1.0
        else:
            M = np.eye(n, dtype=complex)
        parts.append((f, M))

    def fn(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (n, n), dtype=complex)
        for f, M in parts:
            out += np.asarray(f(x), dtype=float)[..., None, None] * M
        return out

    return fn, bps


def _geometry(g, path: str) -> Geometry:
    if not isinstance(g, dict):
        raise SpecError(f"{path}: expected an object")
    kind = _get(g, "kind", path, str)
    if kind == "finite":
        a, b = _num(g, "a", path), _num(g, "b", path)
        if not a < b:
            raise SpecError(f"{path}: need a < b, got [{a}, {b}]")
        return Geometry.finite(a, b)
    if kind == "half_line":
        return Geometry.half_line(_num(g, "a", path))
    if kind == "full_line":
        return Geometry.full_line()
    raise SpecError(f"{path}.kind: unknown geometry {kind!r} (finite, half_line, full_line)")


def build_system(s: dict) -> HamiltonianSystem:
    path = "system"
    if not isinstance(s, dict):
        raise SpecError(f"{path}: expected an object")
    family = _get(s, "family", path, str)
    if family not in FAMILIES:
        raise SpecError(f"{path}.family: unknown family {family!r} (one of {', '.join(FAMILIES)})")
    m = _get(s, "m", path, int, 1)
    if m < 1:
        raise SpecError(f"{path}.m: must be positive")
    geom = _geometry(_get(s, "geometry", path), f"{path}.geometry")
    kw = {}
    if "x0" in s:
        kw["x0"] = _num(s, "x0", path)
    try:
        if family == "schrodinger":
            V, bps = _field(_get(s, "potential", path, list, []), m, f"{path}.potential")
            return schrodinger(V, geom, m=m, breakpoints=sorted(set(bps)), name="schrodinger", **kw)
        if family == "sturm_liouville":
            one = [{"type": "constant", "value": 1.0}]
            P, b1 = _field(s.get("P"), m, f"{path}.P", one)
            Q, b2 = _field(s.get("Q"), m, f"{path}.Q")
            R, b3 = _field(s.get("R"), m, f"{path}.R", one)
            return from_sturm_liouville(P, Q, R, geom, m=m, breakpoints=sorted(set(b1 + b2 + b3)),
                                        name="sturm_liouville", **kw)
        mass = _num(s, "mass", path, 0.0)
        V, bps = _field(_get(s, "potential", path, list, []), 2 * m, f"{path}.potential")
        sigma = np.diag(np.r_[np.ones(m), -np.ones(m)]).astype(complex)

        def B(x):
            return -(mass * sigma + V(x))

        return from_dirac(B, geom, m=m, breakpoints=sorted(set(bps)), name="dirac", **kw)
    except HamiltonianError as exc:
        raise SpecError(f"{path}: {exc}") from None


def _boundary(v, m: int, path: str):
    if v is None:
        return None
    if v == "dirichlet":
        return dirichlet(m)
    if v == "neumann":
        return neumann(m)
    if isinstance(v, dict) and "matrix" in v:
        B = _cmatrix(v["matrix"], f"{path}.matrix")
        if B.shape != (2 * m, m):
            raise SpecError(f"{path}.matrix: expected {2 * m}x{m}, got {B.shape[0]}x{B.shape[1]}")
        d = validate_boundary_matrix(B)
        if not d.passed:
            a = path.rsplit(".", 1)[-1]
            failed = [f"{what} (residual {r:.2e})" for what, r in
                      ((f"{a}* {a} != I", d.unitarity), (f"{a}* J {a} != 0", d.lagrangian),
                       (f"{a} {a}* - J {a} {a}* J != I", d.completeness)) if r > BOUNDARY_TOL]
            raise SpecError(f"{path}.matrix: not a boundary matrix: " + "; ".join(failed)
                            + f" [residuals: unitarity {d.unitarity:.2e}, lagrangian {d.lagrangian:.2e},"
                            f" completeness {d.completeness:.2e}]")
        return B
    raise SpecError(f"{path}: expected 'dirichlet', 'neumann' or {{'matrix': ...}}")


def _merge(defaults: dict, given, path: str) -> dict:
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise SpecError(f"{path}: expected an object")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if k not in defaults:
            raise SpecError(f"{path}.{k}: unknown setting")
        out[k] = _merge(defaults[k], v, f"{path}.{k}") if isinstance(defaults[k], dict) else v
    return out


@dataclass
class ProblemSpec:
    raw: dict
    system: HamiltonianSystem
    alpha: np.ndarray | None
    beta: np.ndarray | None
    task: dict
    numerics: dict

    @property
    def normalized(self) -> dict:
        """The spec with every default filled in (what the report echoes)."""
        out = copy.deepcopy(self.raw)
        out["task"] = self.task
        out["numerics"] = self.numerics
        return out

    @property
    def digest(self) -> str:
        text = json.dumps(self.normalized, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def step_control(self) -> StepControl:
        return StepControl(rtol=self.numerics["ode_rtol"], atol=self.numerics["ode_atol"])

    def window_policy(self) -> WindowPolicy:
        return WindowPolicy(**self.numerics["window"])

    def truncation_policy(self) -> TruncationPolicy:
        return TruncationPolicy(**self.numerics["truncation"])


def parse_spec(text: str, overrides: dict | None = None) -> ProblemSpec:
    """Parse and validate a JSON spec; ``overrides`` patch ``numerics``/``task``."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise SpecError("top level: expected an object")
    if raw.get("schema") != SCHEMA:
        raise SpecError(f"schema: expected {SCHEMA!r}, got {raw.get('schema')!r}")
    overrides = overrides or {}
    system = build_system(raw.get("system"))
    bnd = raw.get("boundary", {})
    if not isinstance(bnd, dict):
        raise SpecError("boundary: expected an object")
    for k in bnd:
        if k not in ("alpha", "beta"):
            raise SpecError(f"boundary.{k}: unknown boundary (alpha, beta)")
    alpha = _boundary(bnd.get("alpha"), system.m, "boundary.alpha")
    beta = _boundary(bnd.get("beta"), system.m, "boundary.beta")
    numerics = _merge(DEFAULT_NUMERICS, raw.get("numerics"), "numerics")
    for k, v in overrides.get("numerics", {}).items():
        if isinstance(v, dict):
            numerics[k].update(v)
        else:
            numerics[k] = v
    for k in ("rank_tol", "ode_rtol", "ode_atol"):
        if not isinstance(numerics[k], (int, float)) or not numerics[k] > 0:
            raise SpecError(f"numerics.{k}: expected a positive number")
    task = dict(_get(raw, "task", "spec", dict))
    task.update(overrides.get("task", {}))
    kind = _get(task, "kind", "task", str)
    if kind not in TASKS:
        raise SpecError(f"task.kind: unknown task {kind!r} (one of {', '.join(TASKS)})")
    if kind in ("count", "trace", "verify"):
        l0, l1 = _num(task, "lambda0", "task"), _num(task, "lambda1", "task")
        if not l0 < l1:
            raise SpecError(f"task: need lambda0 < lambda1, got {l0} >= {l1}")
    else:
        rng = _get(task, "lambda_range", "task", list)
        if len(rng) != 2 or not float(rng[0]) < float(rng[1]):
            raise SpecError("task.lambda_range: expected [lo, hi] with lo < hi")
        task.setdefault("method", "shooting")
        if task["method"] not in ("shooting", "finite_difference"):
            raise SpecError("task.method: expected 'shooting' or 'finite_difference'")
        if task["method"] == "finite_difference":
            if raw["system"]["family"] == "dirac":
                raise SpecError("task.method: finite differences need a Sturm-Liouville family")
            task.setdefault("grid_n", 2000)
    return ProblemSpec(raw, system, alpha, beta, task, numerics)


# -- running -------------------------------------------------------------------

@dataclass
class RunReport:
    schema: str
    spec_hash: str
    spec: dict
    command: str
    results: dict
    checks: dict
    files: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())

    def body(self) -> dict:
        """Deterministic part of the report (no timing)."""
        return {"schema": self.schema, "spec_hash": self.spec_hash, "command": self.command,
                "spec": self.spec, "results": self.results, "checks": self.checks,
                "files": sorted(self.files), "status": "ok" if self.passed else "mismatch"}

    def to_json(self) -> str:
        return json.dumps(self.body(), indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        if np.iscomplexobj(o):
            return [[float(v.real), float(v.imag)] for v in o.ravel()]
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not serializable: {type(o).__name__}")


def _oracle_interval(spec: ProblemSpec, window) -> tuple[float, float]:
    iv = spec.numerics["oracle"]["interval"]
    g = spec.system.geometry
    if iv is not None:
        return float(iv[0]), float(iv[1])
    if g.kind == "finite":
        return g.a, g.b
    return float(window[0]), float(window[1])


def _shoot(spec: ProblemSpec, interval, lambda_range):
    o = spec.numerics["oracle"]
    mp = o["match_point"]
    if mp is None and interval[0] < spec.system.x0 < interval[1]:
        mp = spec.system.x0
    return shooting_eigenvalues(spec.system, spec.alpha, spec.beta, interval, lambda_range,
                                o["resolution"], ctrl=spec.step_control(),
                                rank_tol=spec.numerics["rank_tol"], match_point=mp)


def _count(spec: ProblemSpec):
    t = spec.task
    return count_renormalized(spec.system, t["lambda0"], t["lambda1"], spec.alpha, spec.beta,
                              window=spec.window_policy(), trunc=spec.truncation_policy(),
                              ctrl=spec.step_control(), rank_tol=spec.numerics["rank_tol"])


def _identity_checks(rep) -> dict:
    ids = identity_suite(rep)
    out = {f"identity:{k}": v for k, v in ids.to_dict().items()}
    out["monotone_rotation"] = {"counter_rotating": rep.counter_rotating, "pass": rep.counter_rotating == 0}
    return out


def run(spec: ProblemSpec, out_dir: Path | None = None, *, command: str | None = None,
        write_csv: bool = True) -> RunReport:
    """Execute the spec's task; CSV outputs go to ``out_dir`` when given."""
    t0 = time.perf_counter()
    kind = spec.task["kind"]
    results: dict = {}
    checks: dict = {}
    files: list[str] = []
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def emit(name, writer):
        if out_dir is not None and write_csv:
            writer(out_dir / name)
            files.append(name)

    if kind == "spectrum":
        lo, hi = map(float, spec.task["lambda_range"])
        iv = _oracle_interval(spec, (spec.system.x0 - 20.0, spec.system.x0 + 20.0))
        if spec.task["method"] == "shooting":
            sp = _shoot(spec, iv, (lo, hi))
        else:
            sys_ = spec.system
            m = sys_.m

            def P(x):
                return np.linalg.inv(np.asarray(sys_.B(x))[..., m:, m:])

            def Q(x):
                return -np.asarray(sys_.B(x))[..., :m, :m]

            sp = fd_schrodinger_spectrum(P, Q, sys_.W, iv, spec.task["grid_n"], m=m, lambda_range=(lo, hi))
        results["spectrum"] = {"method": sp.method, "interval": list(sp.interval),
                               "eigenvalues": sp.eigenvalues, "multiplicities": sp.multiplicities,
                               "resolution": {k: v for k, v in sp.resolution.items()
                                              if k != "multiplicity_mismatch"}}
        emit("spectrum.csv", sp.to_csv)
    else:
        rep = _count(spec)
        results["count"] = rep.to_dict()
        checks.update(_identity_checks(rep))
        if kind in ("count", "verify"):
            emit("events.csv", rep.events_csv)
        if kind in ("trace", "verify"):
            emit("trace.csv", rep.trace.to_csv)
        if kind == "verify":
            iv = _oracle_interval(spec, rep.window)
            sp = _shoot(spec, iv, (spec.task["lambda0"], spec.task["lambda1"]))
            n_oracle = sp.count_in(spec.task["lambda0"], spec.task["lambda1"])
            results["oracle"] = {"method": sp.method, "interval": list(iv), "eigenvalues": sp.eigenvalues,
                                 "multiplicities": sp.multiplicities, "count": n_oracle}
            checks["oracle_agreement"] = {"renormalized": rep.total, "oracle": n_oracle,
                                          "agreement": "exact" if n_oracle == rep.total else "mismatch",
                                          "pass": n_oracle == rep.total}
            if rep.events:
                res = orthogonality_check(rep)
                worst = max((r.relative for r in res), default=0.0)
                gap = max((r.route_gap for r in res), default=0.0)
                checks["orthogonality"] = {"max_relative": worst, "route_gap": gap,
                                           "tolerance": ORTHOGONALITY_TOL,
                                           "pass": worst <= ORTHOGONALITY_TOL and gap <= ORTHOGONALITY_TOL}
            emit("spectrum.csv", sp.to_csv)
    return RunReport(SCHEMA, spec.digest, spec.normalized, command or kind, results, checks, files,
                     time.perf_counter() - t0)


# -- demos ---------------------------------------------------------------------

DEMOS = {
    "box": {
        "schema": SCHEMA,
        "system": {"family": "schrodinger", "geometry": {"kind": "finite", "a": 0.0, "b": float(np.pi)},
                   "potential": []},
        "boundary": {"alpha": "dirichlet", "beta": "dirichlet"},
        "task": {"kind": "verify", "lambda0": 1.5, "lambda1": 10.5},
    },
    "mathieu-gap": {
        "schema": SCHEMA,
        "system": {"family": "schrodinger", "geometry": {"kind": "half_line", "a": 0.0}, "x0": 7.0,
                   "potential": [{"type": "cosine", "amplitude": 2.0, "frequency": 2.0},
                                 {"type": "piecewise_constant", "edges": [1.0, 13.0], "values": [-1.0]}]},
        "boundary": {"alpha": "dirichlet"},
        "task": {"kind": "verify", "lambda0": 0.0, "lambda1": 1.7},
    },
    "dirac-well": {
        "schema": SCHEMA,
        "system": {"family": "dirac", "geometry": {"kind": "full_line"}, "x0": 0.0, "mass": 1.0,
                   "potential": [{"type": "piecewise_constant", "edges": [-1.0, 1.0], "values": [-0.5]}]},
        "task": {"kind": "verify", "lambda0": -0.9, "lambda1": 0.9},
    },
}


# -- entry point ---------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="renosc", description="Renormalized oscillation counts in spectral gaps.")
    p.add_argument("command", choices=TASKS + ("demo",))
    p.add_argument("name", nargs="?", help="demo name: " + ", ".join(DEMOS))
    p.add_argument("--spec", type=Path, help="JSON problem spec")
    p.add_argument("--out", type=Path, default=Path("renosc-out"), help="output directory")
    p.add_argument("--tol-rank", type=float, help="relative SVD rank tolerance (default 1e-8)")
    p.add_argument("--tol-ode", type=float, help="ODE relative tolerance (default 1e-10)")
    p.add_argument("--window-growth", type=float, help="window growth factor (default 1.5)")
    p.add_argument("--json-only", action="store_true",
                   help="write only report.json and print it instead of the summary")
    return p


def _summary(rep: RunReport) -> str:
    lines = [f"renosc {rep.command}: {'ok' if rep.passed else 'MISMATCH'} ({rep.wall_time:.2f} s)"]
    if "count" in rep.results:
        c = rep.results["count"]
        lines.append(f"  count in ({c['lambda0']:g}, {c['lambda1']:g}): {c['total']} "
                     f"({len(c['events'])} crossing(s), window {c['window']})")
    if "spectrum" in rep.results:
        s = rep.results["spectrum"]
        lines.append(f"  {len(s['eigenvalues'])} eigenvalue(s) by {s['method']} on {s['interval']}")
        lines += [f"    {float(v):.12g} (x{int(k)})" for v, k in zip(s["eigenvalues"], s["multiplicities"])]
    if "oracle" in rep.results:
        lines.append(f"  shooting oracle on {rep.results['oracle']['interval']}: {rep.results['oracle']['count']}")
    for name, c in sorted(rep.checks.items()):
        if not c["pass"]:
            lines.append(f"  FAILED {name}: {c}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    overrides: dict = {"numerics": {}}
    if args.tol_rank is not None:
        overrides["numerics"]["rank_tol"] = args.tol_rank
    if args.tol_ode is not None:
        overrides["numerics"]["ode_rtol"] = args.tol_ode
    if args.window_growth is not None:
        overrides["numerics"]["window"] = {"growth": args.window_growth}
        overrides["numerics"]["truncation"] = {"growth": args.window_growth}
    try:
        if args.command == "demo":
            if args.name not in DEMOS:
                raise SpecError(f"demo: unknown demo {args.name!r} (one of {', '.join(DEMOS)})")
            text = json.dumps(DEMOS[args.name])
        else:
            if args.spec is None:
                raise SpecError("--spec is required for this command")
            try:
                text = args.spec.read_text()
            except OSError as exc:
                raise SpecError(f"cannot read spec: {exc}") from None
            overrides["task"] = {"kind": args.command}
        spec = parse_spec(text, overrides)
    except SpecError as exc:
        print(f"spec error: {exc}", file=sys.stderr)
        return EXIT_SPEC
    command = f"demo {args.name}" if args.command == "demo" else args.command
    try:
        rep = run(spec, args.out, command=command, write_csv=not args.json_only)
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure ({type(exc).__name__}) in task {spec.task}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    args.out.mkdir(parents=True, exist_ok=True)
    body = rep.to_json()
    (args.out / "report.json").write_text(body)
    if not args.json_only:
        (args.out / "timing.json").write_text(json.dumps({"wall_time_s": rep.wall_time}) + "\n")
    print(body if args.json_only else _summary(rep), end="\n" if not args.json_only else "")
    return EXIT_OK if rep.passed else EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
