"""Closed-form and iterative solvers over every prefix of a key/value stream.

These recompute each prefix from scratch and are the ground truth that the
sequential recurrences in :mod:`ttreg.memory` are checked against.
"""

import numpy as np

from ttreg.errors import DimensionMismatch, GateOutOfRange, NotSPD, SolveFailure
from ttreg.linalg import as_matrix, solve_spd


def _check_kv(K, V):
    K = as_matrix(K, "K")
    V = as_matrix(V, "V")
    if K.shape[0] != V.shape[0]:
        raise DimensionMismatch(f"K has {K.shape[0]} rows but V has {V.shape[0]}")
    return K, V


def _weighted_solution(K, V, w, ridge, index):
    """``V^T W K (K^T W K + ridge I)^{-1}``, with the min-norm fallback at ``ridge == 0``."""
    if ridge > 0:
        # orthogonal solve of the stacked system [sqrt(w) K; sqrt(ridge) I]
        # avoids squaring the condition number of K
        d_k = K.shape[1]
        sw = np.sqrt(w)[:, None]
        A = np.vstack([sw * K, np.sqrt(ridge) * np.eye(d_k)])
        B = np.vstack([sw * V, np.zeros((d_k, V.shape[1]))])
        return np.linalg.lstsq(A, B, rcond=None)[0].T
    KtW = K.T * w
    try:
        try:
            return solve_spd(KtW @ K, KtW @ V).T
        except NotSPD:
            # Underdetermined: min-norm interpolant V^T (K K^T)^{-1} K.
            # Weights do not change the interpolating solution.
            return solve_spd(K @ K.T, V).T @ K
    except NotSPD as exc:
        raise SolveFailure(f"prefix {index}: Gram matrix is singular ({exc})", index=index) from exc


def batch_ols_prefixes(K, V, ridge=0.0):
    """Least-squares memory ``M_t`` for every prefix ``t = 1..T``.

    Parameters
    ----------
    K : ndarray of shape (T, D_k)
        Keys as rows.
    V : ndarray of shape (T, D_v)
        Values as rows.
    ridge : float
        With ``ridge > 0`` every prefix uses ``V^T K (K^T K + ridge I)^{-1}``.
        With ``ridge == 0`` the primal form is tried first and the dual
        min-norm form ``V^T (K K^T)^{-1} K`` is used when ``K^T K`` fails its
        Cholesky factorisation.

    Returns
    -------
    ndarray of shape (T, D_v, D_k)
    """
    K, V = _check_kv(K, V)
    return batch_wls_prefixes(K, V, np.ones(K.shape[0]), ridge)


def prefix_weights(gammas, t):
    """Weights ``prod_{j=i+1}^{t} gamma_j`` for ``i = 1..t`` (1-based)."""
    g = np.asarray(gammas, dtype=float)[:t]
    # reverse cumulative product of gamma_{i+1..t}; the last weight is 1
    tail = np.cumprod(g[:0:-1])[::-1]
    return np.append(tail, 1.0)


def batch_wls_prefixes(K, V, gammas, ridge=0.0):
    """Geometrically weighted least squares for every prefix.

    Pair ``i`` in prefix ``t`` gets weight ``prod_{j=i+1}^t gamma_j``.  The
    ridge term is weighted like a pseudo-observation preceding pair 1, i.e.
    ``ridge * prod_{j=1}^t gamma_j``, which is the regulariser carried by
    exponentially weighted RLS started from ``P_0 = I / ridge``.
    """
    K, V = _check_kv(K, V)
    gammas = np.broadcast_to(np.asarray(gammas, dtype=float), (K.shape[0],))
    if np.any(gammas <= 0) or np.any(gammas > 1):
        raise GateOutOfRange("weighted least squares needs gammas in (0, 1]")
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}")
    T = K.shape[0]
    out = np.empty((T, V.shape[1], K.shape[1]))
    decay = np.cumprod(gammas)
    for t in range(1, T + 1):
        w = prefix_weights(gammas, t)
        out[t - 1] = _weighted_solution(K[:t], V[:t], w, ridge * decay[t - 1], t)
    return out


def _as_schedule(beta, steps):
    b = np.asarray(beta, dtype=float)
    if b.ndim == 0:
        return np.full(steps, float(b))
    if b.size < steps:
        raise DimensionMismatch(f"step-size schedule has {b.size} entries, need {steps}")
    return b[:steps]


def gd_solve(K, V, steps=1, beta=1.0, preconditioned=False, return_losses=False):
    """Full-batch gradient descent on ``0.5 sum_i |v_i - M k_i|^2`` from ``M = 0``.

    The gradient is ``(M K^T - V^T) K``.  With ``preconditioned=True`` each
    step multiplies the gradient by the inverse curvature ``(K^T K)^{-1}``;
    one such step with ``beta = 1`` lands on the least-squares solution.

    Returns the final memory, and the per-step objective values if
    ``return_losses`` is set (entry 0 is the loss at the origin).
    """
    K, V = _check_kv(K, V)
    if steps < 1:
        raise ValueError("steps must be at least 1")
    betas = _as_schedule(beta, steps)
    G = K.T @ K
    C = V.T @ K
    M = np.zeros((V.shape[1], K.shape[1]))
    losses = [0.5 * float(np.sum(V * V))]
    for i in range(steps):
        grad = M @ G - C
        if preconditioned:
            try:
                grad = solve_spd(G, grad.T).T
            except NotSPD as exc:
                raise SolveFailure(f"curvature K^T K is singular ({exc})") from exc
        M = M - betas[i] * grad
        if return_losses:
            R = V - K @ M.T
            losses.append(0.5 * float(np.sum(R * R)))
    if return_losses:
        return M, np.array(losses)
    return M
