"""Small dense linear algebra: SPD solves, rank-one inverse updates and the
smallest eigenvalue of a symmetric matrix.

Matrices are plain ``float64`` numpy arrays; keys and values are stored as
rows, so a stack of ``t`` keys is a ``(t, D_k)`` array.
"""

import numpy as np
import scipy.linalg

from ttreg.errors import DimensionMismatch, NoConvergence, NotSPD, SingularUpdate

SYMMETRY_TOL = 1e-10
SM_DENOMINATOR_TOL = 1e-12
# Pivots below PIVOT_RTOL * n * max(diag A) are treated as zero.
PIVOT_RTOL = 10 * np.finfo(float).eps


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    return a


def as_vector(a, name="vector"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {a.shape}")
    return a


def _check_symmetric(A):
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > SYMMETRY_TOL * scale:
        raise NotSPD("matrix is not symmetric")


def cholesky(A):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises :class:`NotSPD` when a pivot is not safely positive, including
    the roundoff-sized pivots produced by numerically singular Gram
    matrices.
    """
    A = as_matrix(A, "A")
    _check_symmetric(A)
    n = A.shape[0]
    if n == 0:
        return A.copy()
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("Cholesky pivot <= 0") from exc
    threshold = PIVOT_RTOL * n * max(float(np.max(np.diag(A))), 0.0)
    if not np.all(np.isfinite(L)) or np.min(np.diag(L)) ** 2 <= threshold:
        raise NotSPD("Cholesky pivot numerically zero")
    return L


def solve_spd(A, B):
    """Solve ``A X = B`` for symmetric positive-definite ``A``.

    Parameters
    ----------
    A : ndarray of shape (n, n)
    B : ndarray of shape (n, m) or (n,)

    Returns
    -------
    X : ndarray with the shape of ``B``
    """
    A = as_matrix(A, "A")
    B = np.asarray(B, dtype=float)
    if B.ndim not in (1, 2) or B.shape[0] != A.shape[0]:
        raise DimensionMismatch(f"cannot solve {A.shape} system with rhs {B.shape}")
    L = cholesky(A)
    return scipy.linalg.cho_solve((L, True), B)


def sherman_morrison(P, u, c=1.0):
    """Inverse of ``A + c u u^T`` given ``P = A^{-1}`` (symmetric)."""
    P = as_matrix(P, "P")
    u = as_vector(u, "u")
    if P.shape != (u.size, u.size):
        raise DimensionMismatch(f"P {P.shape} does not match u of length {u.size}")
    if c == 0.0:
        return P.copy()
    Pu = P @ u
    denom = 1.0 + c * float(u @ Pu)
    if abs(denom) <= SM_DENOMINATOR_TOL:
        raise SingularUpdate(f"rank-one update denominator {denom:.3e} is singular")
    return P - (c / denom) * np.outer(Pu, Pu)


def _is_pd(A):
    try:
        np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return False
    return True


def min_eigenvalue(A, rtol=1e-6, max_iter=10_000):
    """Smallest eigenvalue of a symmetric matrix by shifted inverse iteration.

    The shift is placed just below the spectrum: bisection on Cholesky
    success (Sylvester inertia) brackets the smallest eigenvalue, and
    inverse iteration with the lower bracket as shift refines it.
    Eigenvalues within ``n * eps * |A|_inf`` of zero are only resolved to
    that absolute accuracy.
    """
    A = as_matrix(A, "A")
    _check_symmetric(A)
    n = A.shape[0]
    if n == 0:
        raise DimensionMismatch("empty matrix has no eigenvalues")
    if n == 1:
        return float(A[0, 0])
    norm = float(np.max(np.sum(np.abs(A), axis=1)))
    if norm == 0.0:
        return 0.0
    # work at unit scale so that roundoff floors cannot underflow
    A = A / norm
    floor = n * np.finfo(float).eps

    eye = np.eye(n)
    radius = np.sum(np.abs(A), axis=1) - np.abs(np.diag(A))
    lo = float(np.min(np.diag(A) - radius)) - 1e-3
    hi = float(np.min(np.diag(A)))
    # A - lo I is positive definite; A - hi I is not.
    while hi - lo > max(1e-2 * rtol * abs(hi), floor):
        mid = 0.5 * (lo + hi)
        if _is_pd(A - mid * eye):
            lo = mid
        else:
            hi = mid
    shift = lo - floor

    L = np.linalg.cholesky(A - shift * eye)
    # Fixed pseudo-random start: an all-ones start is an eigenvector of
    # many structured matrices and can be orthogonal to the target.
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.linalg.norm(x)
    rq = float(x @ A @ x)
    for _ in range(max_iter):
        y = scipy.linalg.cho_solve((L, True), x)
        x = y / np.linalg.norm(y)
        new_rq = float(x @ A @ x)
        if abs(new_rq - rq) <= max(1e-3 * rtol * abs(new_rq), floor):
            return float(np.clip(new_rq, lo, hi)) * norm
        rq = new_rq
    raise NoConvergence(f"inverse iteration did not converge in {max_iter} steps")
