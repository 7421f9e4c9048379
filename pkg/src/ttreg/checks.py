"""Cross-checks between independent routes to the same quantity.

Each check draws random instances from a seeded generator and returns the
largest deviation it observed.  ``perturb`` injects a small fault on one
side of every check, which the harness should then flag.
"""

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ttreg import batch, memory, nonparam
from ttreg.memory import LayerConfig, init_state, step

FAULT = 1e-3


@dataclass(frozen=True)
class Check:
    name: str
    tolerance: float
    run: Callable  # (rng, perturb) -> max deviation


def _trajectory(config, K, V):
    state = init_state(config, K.shape[1], V.shape[1])
    out = []
    for k, v in zip(K, V):
        state = step(state, k, v, config)
        out.append(state.M)
    return np.array(out)


def batch_vs_rls(rng, perturb=False, T=128, d_k=16, d_v=4, ridge=1e-6):
    K = rng.standard_normal((T, d_k))
    V = rng.standard_normal((T, d_v))
    seq = _trajectory(LayerConfig("rls", ridge=ridge), K + FAULT * perturb, V)
    return float(np.max(np.abs(seq - batch.batch_ols_prefixes(K, V, ridge))))


def batch_vs_wrls(rng, perturb=False, T=128, d_k=16, d_v=4, ridge=1e-6):
    K = rng.standard_normal((T, d_k))
    V = rng.standard_normal((T, d_v))
    gammas = rng.uniform(0.9, 1.0, size=T)
    seq = _trajectory(LayerConfig("weighted_rls", gamma=gammas, ridge=ridge), K, V + FAULT * perturb)
    return float(np.max(np.abs(seq - batch.batch_wls_prefixes(K, V, gammas, ridge))))


def preconditioned_gd_vs_ols(rng, perturb=False, T=32, d_k=6, d_v=3):
    K = rng.standard_normal((T, d_k))
    V = rng.standard_normal((T, d_v))
    M = batch.gd_solve(K, V, steps=1, beta=1.0 + FAULT * perturb, preconditioned=True)
    return float(np.max(np.abs(M - batch.batch_ols_prefixes(K, V, 0.0)[-1])))


def one_step_gd_vs_vtk(rng, perturb=False, T=32, d_k=6, d_v=3):
    K = rng.standard_normal((T, d_k))
    V = rng.standard_normal((T, d_v))
    M = batch.gd_solve(K, V, steps=1, beta=1.0 + FAULT * perturb)
    return float(np.max(np.abs(M - V.T @ K)))


def leaky_vs_gated_deltanet(rng, perturb=False, T=100, d_k=6, d_v=3):
    K = rng.standard_normal((T, d_k)) / np.sqrt(d_k)
    V = rng.standard_normal((T, d_v))
    worst = 0.0
    for beta in (0.1, 0.5, 0.9):
        for lam in (0.0, 0.3, 0.9):
            leaky = memory.MemoryState(np.zeros((d_v, d_k)))
            gated = memory.MemoryState(np.zeros((d_v, d_k)))
            for k, v in zip(K, V):
                leaky = memory.update_leaky_lms(leaky, k, v, beta, lam)
                alpha, eta, v_prime = memory.reparam_leaky_to_gated(beta, lam, v)
                gated = memory.update_gated_deltanet(gated, k, v_prime + FAULT * perturb, alpha, eta)
                worst = max(worst, float(np.max(np.abs(leaky.M - gated.M))))
    return worst


def longhorn_vs_nlms(rng, perturb=False, d_k=6, d_v=3, delta=1e12):
    M0 = memory.MemoryState(rng.standard_normal((d_v, d_k)))
    k = rng.standard_normal(d_k)
    v = rng.standard_normal(d_v)
    a = memory.update_longhorn(M0, k, v, delta).M
    b = memory.update_nlms(M0, k + FAULT * perturb, v).M
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


def nlms_interpolation(rng, perturb=False, steps=1000, d_k=6, d_v=3):
    state = memory.MemoryState(np.zeros((d_v, d_k)))
    worst = 0.0
    for _ in range(steps):
        k = rng.standard_normal(d_k)
        v = rng.standard_normal(d_v)
        state = memory.update_nlms(state, k, v)
        worst = max(worst, float(np.max(np.abs(state.M @ k - v - FAULT * perturb))))
    return worst


def qknorm_softmax_identity(rng, perturb=False):
    worst = 0.0
    for t in (1, 2, 17, 128):
        for d_k in (4, 64):
            K = np.array([nonparam.qknorm(k) for k in rng.standard_normal((t, d_k))])
            V = rng.standard_normal((t, 3))
            q = nonparam.qknorm(rng.standard_normal(d_k))
            buf = nonparam.KVBuffer.from_arrays(K, V)
            smooth = nonparam.KernelConfig("exp_smoothing", 2 * np.sqrt(d_k) * (1 + FAULT * perturb))
            diff = nonparam.nw_query(buf, q, smooth) - nonparam.softmax_attention(buf, q)
            worst = max(worst, float(np.max(np.abs(diff))))
    return worst


def local_linear_affine(rng, perturb=False, d_k=4, d_v=2):
    t = d_k + 4
    K = rng.standard_normal((t, d_k))
    A = rng.standard_normal((d_v, d_k))
    b = rng.standard_normal(d_v)
    q = rng.standard_normal(d_k)
    buf = nonparam.KVBuffer.from_arrays(K, K @ A.T + b + FAULT * perturb * K[:, :1] ** 2)
    kernel = nonparam.KernelConfig("exp_smoothing", 2.0 * d_k)
    return float(np.max(np.abs(nonparam.local_linear_query(buf, q, kernel) - (A @ q + b))))


def appendix_bound_ratio(rng, perturb=False, t=24, d_k=6, d_v=3):
    """Returns ``max(0, |y| / bound - 1)``."""
    K = rng.standard_normal((t, d_k))
    V = rng.standard_normal((t, d_v))
    q = rng.standard_normal(d_k)
    y = batch.batch_ols_prefixes(K, V, 0.0)[-1] @ q
    bound = memory.norm_bound(K, V, q) * (1.0 - 0.999 * perturb)
    return max(0.0, float(np.linalg.norm(y)) / bound - 1.0)


def kernel_feature_duality(rng, perturb=False, t=30, d_k=5, d_v=2, ridge=1e-3):
    K = rng.standard_normal((t, d_k))
    V = rng.standard_normal((t, d_v))
    q = rng.standard_normal(d_k)
    buf = nonparam.KVBuffer.from_arrays(K, V)
    dual = nonparam.kernel_regression_query(buf, q, nonparam.KernelConfig("poly2"), ridge)
    phi = memory.FeatureMap.POLY2
    M = batch.batch_ols_prefixes(phi(K), V, ridge * (1 + FAULT * perturb))[-1]
    return float(np.max(np.abs(dual - M @ phi(q))))


CHECKS = (
    Check("batch_vs_rls", 1e-7, batch_vs_rls),
    Check("batch_vs_weighted_rls", 1e-7, batch_vs_wrls),
    Check("preconditioned_gd_vs_ols", 1e-10, preconditioned_gd_vs_ols),
    Check("one_step_gd_vs_VtK", 0.0, one_step_gd_vs_vtk),
    Check("leaky_lms_vs_gated_deltanet", 1e-10, leaky_vs_gated_deltanet),
    Check("longhorn_large_delta_vs_nlms", 1e-4, longhorn_vs_nlms),
    Check("nlms_interpolation", 1e-10, nlms_interpolation),
    Check("qknorm_softmax_identity", 1e-10, qknorm_softmax_identity),
    Check("local_linear_affine_reproduction", 1e-6, local_linear_affine),
    Check("output_norm_bound_excess", 1e-9, appendix_bound_ratio),
    Check("kernel_feature_duality", 1e-6, kernel_feature_duality),
)


def run_checks(seeds, perturb=False):
    """Yield ``(check, max_deviation)`` pairs, each maxed over ``seeds``."""
    for check in CHECKS:
        worst = 0.0
        for seed in seeds:
            worst = max(worst, check.run(np.random.default_rng([seed, zlib.crc32(check.name.encode())]), perturb))
        yield check, worst
