"""Eigenvalue counting in spectral gaps of Hamiltonian systems by
renormalized oscillation theory, with independent eigensolver checks."""

from .hamsys import (
    Geometry,
    HamiltonianError,
    HamiltonianSystem,
    boundary_from_solution,
    dirichlet,
    from_dirac,
    from_sturm_liouville,
    neumann,
    schrodinger,
    validate_boundary_matrix,
)
from .oracle import fd_schrodinger_spectrum, nystrom_resolvent_spectrum, shooting_eigenvalues
from .oscillation import (
    WindowPolicy,
    count_classical,
    count_renormalized,
    detect_crossings,
    identity_suite,
    orthogonality_check,
    wronskian_trace,
)
from .propagate import StepControl, Trajectory, integrate_frame, prufer_decompose
from .weyl import TruncationPolicy, greens_kernel, weyl_minus, weyl_plus

__version__ = "0.1.0"

__all__ = [
    "boundary_from_solution",
    "count_classical",
    "count_renormalized",
    "detect_crossings",
    "dirichlet",
    "fd_schrodinger_spectrum",
    "from_dirac",
    "from_sturm_liouville",
    "Geometry",
    "greens_kernel",
    "HamiltonianError",
    "HamiltonianSystem",
    "identity_suite",
    "integrate_frame",
    "neumann",
    "nystrom_resolvent_spectrum",
    "orthogonality_check",
    "prufer_decompose",
    "schrodinger",
    "shooting_eigenvalues",
    "StepControl",
    "Trajectory",
    "TruncationPolicy",
    "validate_boundary_matrix",
    "weyl_minus",
    "weyl_plus",
    "WindowPolicy",
    "wronskian_trace",
]
