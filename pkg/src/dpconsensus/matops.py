"""Dense real-matrix primitives at desk scale.

Matrices are plain 2-D float ``numpy`` arrays (row-major).  Problem sizes
in this package stay around 100x100, so everything is dense and
unblocked; eigenvalues come from LAPACK via ``numpy.linalg``.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, PreconditionError

# Stability comparisons against 1 use a strict margin so marginal cases
# are never accepted as stable.
STABILITY_MARGIN = 1e-12

SYMMETRY_RTOL = 1e-10


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Validate and return ``m`` as a finite 2-D float array."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2:
        raise PreconditionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError(f"{name} has non-finite entries")
    return a


def kron(a, b) -> np.ndarray:
    """Kronecker product: block (i, j) of the result equals a[i, j] * b."""
    return np.kron(as_matrix(a, "kron lhs"), as_matrix(b, "kron rhs"))


def induced_one_norm(m) -> float:
    """Induced 1-norm: maximum column sum of absolute entries."""
    a = as_matrix(m, "1-norm operand")
    if a.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(a), axis=0)))


def spectral_radius(m, name: str = "matrix") -> float:
    """Largest eigenvalue modulus of a square matrix.

    Uses a dense QR-based eigensolve, so complex spectra and repeated
    eigenvalues are handled deterministically.
    """
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {a.shape}")
    if a.size == 0:
        return 0.0
    try:
        ev = np.linalg.eigvals(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed on {name}: {exc}") from exc
    return float(np.max(np.abs(ev)))


def is_schur(rho: float) -> bool:
    """Strict stability test against 1 with the package-wide margin."""
    return rho < 1.0 - STABILITY_MARGIN


def sym_eigvals(m, name: str = "matrix") -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted ascending.

    Rejects inputs whose asymmetry exceeds ``SYMMETRY_RTOL`` relative to
    the matrix norm.
    """
    a = as_matrix(m, name)
    if a.shape[0] != a.shape[1]:
        raise PreconditionError(f"{name} must be square, got shape {a.shape}")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > SYMMETRY_RTOL * max(scale, 1e-300):
        raise PreconditionError(f"{name} is not symmetric")
    try:
        ev = np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"symmetric eigensolver failed on {name}: {exc}") from exc
    return np.sort(ev)
