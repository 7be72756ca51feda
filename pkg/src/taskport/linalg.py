"""Dense float64 kernels used by the matching pipeline.

Only singular *values* are ever needed, so the SVD here is a one-sided Jacobi
sweep on the tall orientation of the input: cheap for the short-fat head
matrices this package mostly sees, and easy to certify against a brute-force
Gram-eigenvalue oracle.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalFailureError

_JACOBI_MAX_SWEEPS = 60
_JACOBI_TOL = 1e-14


def as_matrix(a) -> np.ndarray:
    """Coerce to a finite 2-D float64 array, raising ValueError otherwise."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a 2-D matrix with positive dims, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def frobenius_inner(a, b) -> float:
    """Sum of elementwise products of two equally shaped matrices."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def vector_pnorm(a, b, p: float = 2.0) -> float:
    """p-norm of the difference of two equal-length vectors, p >= 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"expected equal-length vectors, got shapes {a.shape} and {b.shape}")
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    d = np.abs(a - b)
    if np.isinf(p):
        return float(d.max())
    return float(np.sum(d**p) ** (1.0 / p))


def permute_rows(m: np.ndarray, p) -> np.ndarray:
    """Row application: out[i, :] = m[p[i], :]."""
    p = np.asarray(p, dtype=np.int64)
    if m.ndim != 2 or p.size != m.shape[0]:
        raise ValueError(f"row permutation of length {p.size} does not fit shape {m.shape}")
    return m[p, :]


def permute_cols(m: np.ndarray, p) -> np.ndarray:
    """Column application: out[:, j] = m[:, p[j]]."""
    p = np.asarray(p, dtype=np.int64)
    if m.ndim != 2 or p.size != m.shape[1]:
        raise ValueError(f"column permutation of length {p.size} does not fit shape {m.shape}")
    return m[:, p]


def singular_values(m, max_sweeps: int = _JACOBI_MAX_SWEEPS, tol: float = _JACOBI_TOL) -> np.ndarray:
    """Singular values of ``m``, sorted descending, length min(rows, cols).

    One-sided Jacobi: orthogonalize the columns of the tall orientation by
    plane rotations until every pair is numerically orthogonal; the column
    norms are then the singular values.  Raises NumericalFailureError if the
    sweep cap is hit before convergence.
    """
    a = as_matrix(m)
    b = a.copy() if a.shape[0] >= a.shape[1] else a.T.copy()
    k = b.shape[1]

    converged = False
    for _ in range(max_sweeps):
        rotated = False
        for p in range(k - 1):
            for q in range(p + 1, k):
                x = b[:, p].copy()
                y = b[:, q]
                alpha = float(x @ x)
                beta = float(y @ y)
                gamma = float(x @ y)
                if gamma == 0.0 or alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                b[:, p] = c * x - s * y
                b[:, q] = s * x + c * y
                rotated = True
        if not rotated:
            converged = True
            break
    if not converged:
        raise NumericalFailureError(
            f"one-sided Jacobi did not converge in {max_sweeps} sweeps on shape {a.shape}"
        )

    sv = np.sqrt(np.sum(b * b, axis=0))
    sv.sort()
    return sv[::-1].copy()
