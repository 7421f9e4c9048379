"""Nonparametric memories: kernel regression, Nadaraya-Watson (softmax
attention) and the local-linear estimator.

These keep every key/value pair and recompute the fit at query time.
Exponential kernels are evaluated in log space and shifted by their maximum
before exponentiating, which keeps weights finite for keys and queries with
norms up to ~1e3.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ttreg.errors import DegenerateVector, DimensionMismatch, EmptyBuffer, NotSPD, SolveFailure
from ttreg.linalg import as_matrix, as_vector, solve_spd

DEFAULT_JITTER = 1e-8


class KernelKind(str, Enum):
    EXP_SMOOTHING = "exp_smoothing"  # exp(-|k - q|^2 / B)
    SCALED_DOT_EXP = "scaled_dot_exp"  # exp(k.q / sqrt(D_k))
    POLY2 = "poly2"  # inner product of degree-2 monomial features


@dataclass(frozen=True)
class KernelConfig:
    kind: KernelKind = KernelKind.EXP_SMOOTHING
    bandwidth: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")

    def log_weights(self, keys, q):
        """Log-kernel between each row of ``keys`` and ``q`` (exp kernels only)."""
        if self.kind is KernelKind.EXP_SMOOTHING:
            diff = keys - q
            return -np.einsum("ij,ij->i", diff, diff) / self.bandwidth
        if self.kind is KernelKind.SCALED_DOT_EXP:
            return keys @ q / np.sqrt(keys.shape[1])
        raise ValueError(f"{self.kind.value} kernel has no log form")

    def gram(self, A, B):
        """Kernel matrix ``k(A_i, B_j)``."""
        if self.kind is KernelKind.POLY2:
            dot = A @ B.T
            sq = (A * A) @ (B * B).T
            return 1.0 + dot + 0.5 * (dot * dot + sq)
        if self.kind is KernelKind.EXP_SMOOTHING:
            d2 = (
                np.sum(A * A, axis=1)[:, None]
                + np.sum(B * B, axis=1)[None, :]
                - 2.0 * A @ B.T
            )
            return np.exp(-np.maximum(d2, 0.0) / self.bandwidth)
        return np.exp(A @ B.T / np.sqrt(A.shape[1]))


@dataclass
class KVBuffer:
    """Growing store of key/value rows."""

    d_k: int
    d_v: int
    _keys: list = field(default_factory=list, repr=False)
    _values: list = field(default_factory=list, repr=False)

    @classmethod
    def from_arrays(cls, keys, values):
        keys = as_matrix(keys, "keys")
        values = as_matrix(values, "values")
        if keys.shape[0] != values.shape[0]:
            raise DimensionMismatch("keys and values need the same number of rows")
        buf = cls(keys.shape[1], values.shape[1])
        buf._keys = list(keys)
        buf._values = list(values)
        return buf

    def append(self, k, v):
        k = as_vector(k, "k")
        v = as_vector(v, "v")
        if k.size != self.d_k or v.size != self.d_v:
            raise DimensionMismatch(f"expected ({self.d_k}, {self.d_v}), got ({k.size}, {v.size})")
        if not (np.all(np.isfinite(k)) and np.all(np.isfinite(v))):
            raise ValueError("key/value rows must be finite")
        self._keys.append(k.copy())
        self._values.append(v.copy())

    def __len__(self):
        return len(self._keys)

    @property
    def keys(self):
        return np.array(self._keys).reshape(len(self), self.d_k)

    @property
    def values(self):
        return np.array(self._values).reshape(len(self), self.d_v)


def _prepare(buf, q):
    if len(buf) == 0:
        raise EmptyBuffer("query on an empty buffer")
    q = as_vector(q, "q")
    if q.size != buf.d_k:
        raise DimensionMismatch(f"query of length {q.size}, keys of length {buf.d_k}")
    return buf.keys, buf.values, q


def qknorm(x):
    x = as_vector(x, "x")
    n = float(np.linalg.norm(x))
    if n <= 1e-12:
        raise DegenerateVector("cannot normalise a zero vector")
    return x / n


def normalized_weights(log_w):
    """Softmax of log-weights with the max shifted out."""
    w = np.exp(log_w - np.max(log_w))
    return w / np.sum(w)


def nw_query(buf, q, kernel):
    """Nadaraya-Watson estimate: kernel-weighted mean of the stored values."""
    keys, values, q = _prepare(buf, q)
    return normalized_weights(kernel.log_weights(keys, q)) @ values


def softmax_attention(buf, q):
    """``softmax(K q / sqrt(D_k))^T V``."""
    return nw_query(buf, q, KernelConfig(KernelKind.SCALED_DOT_EXP))


def local_linear_query(buf, q, kernel, jitter=DEFAULT_JITTER):
    """Intercept of a kernel-weighted affine fit centred at ``q``.

    The fit minimises ``sum_i w_i |v_i - m0 - m1 (k_i - q)|^2``.  It is
    solved in offset form: with ``d_i = k_i - q`` and weighted means
    ``v_bar``, ``d_bar``, the slope solves
    ``(S + jitter I) m1^T = sum_i w_i (d_i - d_bar)(v_i - v_bar)^T`` where
    ``S`` is the weighted scatter of the ``d_i``, and ``m0 = v_bar - m1 d_bar``.
    This is the joint normal-equation solve with ``jitter`` on the slope
    block only.  Weights are max-normalised, so ``jitter`` is relative to
    the largest weight.
    """
    keys, values, q = _prepare(buf, q)
    if not jitter > 0:
        raise ValueError(f"jitter must be positive, got {jitter}")
    log_w = kernel.log_weights(keys, q)
    w = np.exp(log_w - np.max(log_w))
    p = w / np.sum(w)
    D = keys - q
    v_bar = p @ values
    d_bar = p @ D
    Dc = D - d_bar
    S = (Dc.T * w) @ Dc
    S[np.diag_indices_from(S)] += jitter
    try:
        slope = solve_spd(S, (Dc.T * w) @ (values - v_bar)).T
    except NotSPD as exc:
        raise SolveFailure(f"local-linear scatter matrix not SPD: {exc}") from exc
    return v_bar - slope @ d_bar


def kernel_regression_query(buf, q, kernel, ridge=DEFAULT_JITTER):
    """Kernel ridge regression ``V^T (k(K, K) + ridge I)^{-1} k(K, q)``."""
    keys, values, q = _prepare(buf, q)
    if not ridge > 0:
        raise ValueError(f"ridge must be positive, got {ridge}")
    G = kernel.gram(keys, keys)
    G[np.diag_indices_from(G)] += ridge
    kq = kernel.gram(keys, q[None, :])[:, 0]
    try:
        alpha = solve_spd(G, kq)
    except NotSPD as exc:
        raise SolveFailure(f"kernel matrix not SPD: {exc}") from exc
    return values.T @ alpha


class Estimator(str, Enum):
    NADARAYA_WATSON = "nadaraya_watson"
    LOCAL_LINEAR = "local_linear"
    KERNEL_REGRESSION = "kernel_regression"


@dataclass
class NonparamConfig:
    """A nonparametric layer: estimator, kernel and its regulariser.

    ``regularizer`` is the jitter for ``local_linear`` and the ridge for
    ``kernel_regression``; Nadaraya-Watson ignores it.
    """

    estimator: Estimator = Estimator.NADARAYA_WATSON
    kernel: KernelConfig = field(default_factory=KernelConfig)
    regularizer: float = DEFAULT_JITTER
    name: str = ""

    def __post_init__(self):
        self.estimator = Estimator(self.estimator)
        if not self.name:
            self.name = self.estimator.value

    def __call__(self, buf, q):
        if self.estimator is Estimator.NADARAYA_WATSON:
            return nw_query(buf, q, self.kernel)
        if self.estimator is Estimator.LOCAL_LINEAR:
            return local_linear_query(buf, q, self.kernel, self.regularizer)
        return kernel_regression_query(buf, q, self.kernel, self.regularizer)
