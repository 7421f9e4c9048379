"""Parametric associative memories.

A memory is a linear map ``M`` of shape ``(D_v, D_phi)`` applied to
feature-mapped keys.  Each backend is one way of (approximately) solving the
streaming least-squares problem over the key/value pairs seen so far:

==================  ===================================================
backend             update
==================  ===================================================
linear_attention    ``M + v k^T``
gated_la            ``gamma M + v k^T``
rls                 exact ridge least squares via rank-one inverse updates
weighted_rls        RLS with geometric forgetting ``gamma``
lms                 one SGD step (delta rule), step ``beta``
nlms                projection onto ``{M : M k = v}``
longhorn            implicit (proximal) step with strength ``delta``
leaky_lms           SGD with weight decay ``lambda``
gated_deltanet      ``alpha M (I - eta k k^T) + eta v k^T``
==================  ===================================================

Update functions are pure: they take a :class:`MemoryState` and return a
new one.  The low-level ``update_*`` functions expect keys that have already
been feature mapped; :func:`step` and :func:`query` apply the configured
feature map for you.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from ttreg.errors import (
    DegenerateGate,
    DegenerateKey,
    DimensionMismatch,
    GateOutOfRange,
    RankDeficient,
)
from ttreg.linalg import as_matrix, as_vector, min_eigenvalue, sherman_morrison

Schedule = Union[float, Sequence[float], np.ndarray]

NORM_EPS = 1e-6
NLMS_KEY_TOL = 1e-12
GATE_TOL = 1e-12
RANK_TOL = 1e-10


class Backend(str, Enum):
    LINEAR_ATTENTION = "linear_attention"
    GATED_LA = "gated_la"
    RLS = "rls"
    WEIGHTED_RLS = "weighted_rls"
    LMS = "lms"
    NLMS = "nlms"
    LONGHORN = "longhorn"
    LEAKY_LMS = "leaky_lms"
    GATED_DELTANET = "gated_deltanet"


class FeatureMap(str, Enum):
    """Key feature maps ``phi: R^D -> R^{D_phi}``.

    ``poly2`` lists every monomial of degree at most two: the constant 1,
    the ``D`` coordinates, then ``x_i x_j`` for ``i <= j``.  ``shifted_elu``
    is ``x + 1`` for ``x >= 0`` and ``exp(x)`` otherwise, so every feature is
    strictly positive.
    """

    IDENTITY = "identity"
    POLY2 = "poly2"
    SHIFTED_ELU = "shifted_elu"

    def output_dim(self, d):
        if self is FeatureMap.POLY2:
            return 1 + d + d * (d + 1) // 2
        return d

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self is FeatureMap.IDENTITY:
            return x
        if self is FeatureMap.SHIFTED_ELU:
            return np.where(x >= 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
        d = x.shape[-1]
        iu, ju = np.triu_indices(d)
        ones = np.ones(x.shape[:-1] + (1,))
        return np.concatenate([ones, x, x[..., iu] * x[..., ju]], axis=-1)


@dataclass(frozen=True)
class MemoryState:
    """Linear memory ``M`` plus the optional running quantities.

    ``P`` is the running inverse of the (possibly weighted) regularised Gram
    matrix, used by the RLS backends; ``z`` is the running key sum used for
    linear-attention output normalisation; ``t`` counts updates.
    """

    M: np.ndarray
    P: Optional[np.ndarray] = None
    z: Optional[np.ndarray] = None
    t: int = 0

    @property
    def d_v(self):
        return self.M.shape[0]

    @property
    def d_k(self):
        return self.M.shape[1]


@dataclass
class LayerConfig:
    """Backend choice plus its hyperparameter schedules.

    Every schedule is either a constant or a sequence indexed by the
    0-based update count.  ``lam`` is the weight-decay strength of
    ``leaky_lms``.
    """

    backend: Backend = Backend.LINEAR_ATTENTION
    gamma: Schedule = 1.0
    beta: Schedule = 1.0
    delta: Schedule = 1.0
    lam: Schedule = 0.0
    alpha: Schedule = 1.0
    eta: Schedule = 1.0
    ridge: float = 1e-6
    feature_map: FeatureMap = FeatureMap.IDENTITY
    normalize_output: bool = False
    name: str = field(default="", compare=False)

    def __post_init__(self):
        self.backend = Backend(self.backend)
        self.feature_map = FeatureMap(self.feature_map)
        if not self.ridge > 0:
            raise ValueError(f"ridge must be positive, got {self.ridge}")
        if not self.name:
            self.name = self.backend.value

    def value(self, schedule_name, t):
        sched = getattr(self, schedule_name)
        if np.ndim(sched) == 0:
            return float(sched)
        return float(sched[t])


def init_state(config, d_k, d_v):
    """Zero memory for raw keys of dimension ``d_k``."""
    d_phi = config.feature_map.output_dim(d_k)
    P = None
    if config.backend in (Backend.RLS, Backend.WEIGHTED_RLS):
        P = np.eye(d_phi) / config.ridge
    z = np.zeros(d_phi) if config.backend is Backend.LINEAR_ATTENTION else None
    return MemoryState(M=np.zeros((d_v, d_phi)), P=P, z=z, t=0)


def _check(state, k, v):
    k = as_vector(k, "k")
    v = as_vector(v, "v")
    if state.M.shape != (v.size, k.size):
        raise DimensionMismatch(
            f"memory has shape {state.M.shape}, got key {k.size} and value {v.size}"
        )
    return k, v


def _check_gate(gamma, low_open=False):
    if not (0.0 <= gamma <= 1.0) or (low_open and gamma <= 0.0):
        raise GateOutOfRange(f"gate {gamma} outside {'(0, 1]' if low_open else '[0, 1]'}")


def update_linear_attention(state, k, v):
    k, v = _check(state, k, v)
    z = (state.z if state.z is not None else np.zeros_like(k)) + k
    return replace(state, M=state.M + np.outer(v, k), z=z, t=state.t + 1)


def update_gated_la(state, k, v, gamma):
    k, v = _check(state, k, v)
    _check_gate(gamma)
    return replace(state, M=gamma * state.M + np.outer(v, k), t=state.t + 1)


def update_rls(state, k, v):
    """Recursive least squares.

    After ``t`` updates from ``P_0 = I / ridge``, ``M`` equals the ridge
    solution ``V^T K (K^T K + ridge I)^{-1}``.
    """
    return update_wrls(state, k, v, 1.0)


def update_wrls(state, k, v, gamma):
    """Exponentially weighted RLS.

    The Gram matrix recursion is ``G_t = gamma_t G_{t-1} + k k^T`` with
    ``G_0 = ridge I``, so the ridge term decays like a pseudo-observation
    made before the first pair.
    """
    k, v = _check(state, k, v)
    _check_gate(gamma, low_open=True)
    if state.P is None:
        raise DimensionMismatch("RLS update needs a state with an inverse Gram P")
    prior = state.P / gamma
    P = sherman_morrison(prior, k, 1.0)
    P = 0.5 * (P + P.T)
    # gain from the prior inverse: equal to P @ k, but P @ k loses digits
    # once P has absorbed a nearly dependent key
    u = prior @ k
    gain = u / (1.0 + k @ u)
    M = state.M + np.outer(v - state.M @ k, gain)
    return replace(state, M=M, P=P, t=state.t + 1)


def update_lms(state, k, v, beta):
    k, v = _check(state, k, v)
    if beta < 0:
        raise GateOutOfRange(f"step size must be non-negative, got {beta}")
    M = state.M - beta * np.outer(state.M @ k - v, k)
    return replace(state, M=M, t=state.t + 1)


def update_nlms(state, k, v):
    k, v = _check(state, k, v)
    kk = float(k @ k)
    if kk <= NLMS_KEY_TOL:
        raise DegenerateKey(f"NLMS needs a non-zero key, got |k|^2 = {kk:.3e}")
    M = state.M + np.outer(v - state.M @ k, k) / kk
    return replace(state, M=M, t=state.t + 1)


def update_longhorn(state, k, v, delta):
    """Exact minimiser of ``0.5 |M - M_prev|_F^2 + 0.5 delta |v - M k|^2``.

    The minimiser is ``(M_prev + delta v k^T)(I + delta k k^T)^{-1}``.
    Expanding the inverse with Sherman-Morrison gives an LMS step with
    ``beta = delta / (1 + delta |k|^2)``, which is what is evaluated: the
    product form cancels catastrophically for large ``delta``.
    """
    k, v = _check(state, k, v)
    if delta < 0:
        raise GateOutOfRange(f"delta must be non-negative, got {delta}")
    beta = delta / (1.0 + delta * float(k @ k))
    M = state.M + beta * np.outer(v - state.M @ k, k)
    return replace(state, M=M, t=state.t + 1)


def update_leaky_lms(state, k, v, beta, lam):
    k, v = _check(state, k, v)
    if beta < 0 or not (0.0 <= lam <= 1.0) or beta * lam > 1.0:
        raise GateOutOfRange(f"need beta >= 0, lambda in [0, 1], beta*lambda <= 1; got {beta}, {lam}")
    M = (1.0 - beta * lam) * state.M + beta * np.outer(v - state.M @ k, k)
    return replace(state, M=M, t=state.t + 1)


def update_gated_deltanet(state, k, v, alpha, eta):
    k, v = _check(state, k, v)
    if not (0.0 < alpha <= 1.0) or eta < 0:
        raise GateOutOfRange(f"need alpha in (0, 1] and eta >= 0; got {alpha}, {eta}")
    M = alpha * (state.M - eta * np.outer(state.M @ k, k)) + eta * np.outer(v, k)
    return replace(state, M=M, t=state.t + 1)


def reparam_leaky_to_gated(beta, lam, v):
    """Map leaky-LMS ``(beta, lambda, v)`` to gated-DeltaNet ``(alpha, eta, v')``."""
    alpha = 1.0 - beta * lam
    if alpha <= GATE_TOL:
        raise DegenerateGate(f"1 - beta*lambda = {alpha:.3e} is not positive")
    return alpha, beta / alpha, alpha * np.asarray(v, dtype=float)


def reparam_gated_to_leaky(alpha, eta, v_prime):
    """Inverse of :func:`reparam_leaky_to_gated`; returns ``(lambda, beta, v)``."""
    if alpha <= GATE_TOL or eta <= GATE_TOL:
        raise DegenerateGate(f"alpha and eta must be positive; got {alpha}, {eta}")
    return (1.0 - alpha) / (alpha * eta), alpha * eta, np.asarray(v_prime, dtype=float) / alpha


def step(state, k, v, config):
    """Feature-map ``k`` and apply the configured backend update."""
    phi = config.feature_map(as_vector(k, "k"))
    t = state.t
    b = config.backend
    if b is Backend.LINEAR_ATTENTION:
        return update_linear_attention(state, phi, v)
    if b is Backend.GATED_LA:
        return update_gated_la(state, phi, v, config.value("gamma", t))
    if b is Backend.RLS:
        return update_rls(state, phi, v)
    if b is Backend.WEIGHTED_RLS:
        return update_wrls(state, phi, v, config.value("gamma", t))
    if b is Backend.LMS:
        return update_lms(state, phi, v, config.value("beta", t))
    if b is Backend.NLMS:
        return update_nlms(state, phi, v)
    if b is Backend.LONGHORN:
        return update_longhorn(state, phi, v, config.value("delta", t))
    if b is Backend.LEAKY_LMS:
        return update_leaky_lms(state, phi, v, config.value("beta", t), config.value("lam", t))
    if b is Backend.GATED_DELTANET:
        return update_gated_deltanet(state, phi, v, config.value("alpha", t), config.value("eta", t))
    raise ValueError(f"unknown backend {b!r}")


def query(state, q, config):
    """Read the memory at ``q``: ``M phi(q)``.

    With ``normalize_output`` on a linear-attention layer the read is divided
    by ``z^T phi(q) + 1e-6``, ``z`` being the running sum of stored keys.
    """
    phi = config.feature_map(as_vector(q, "q"))
    if phi.size != state.d_k:
        raise DimensionMismatch(f"query maps to {phi.size} features, memory expects {state.d_k}")
    y = state.M @ phi
    if config.normalize_output and config.backend is Backend.LINEAR_ATTENTION:
        y = y / (float(state.z @ phi) + NORM_EPS)
    return y


def run(config, keys, values, queries=None):
    """Stream pairs through one layer; row ``t`` of the result is ``m_t(q_t)``.

    ``m_t`` has absorbed pairs ``1..t``.  Queries default to the keys.
    """
    keys = as_matrix(keys, "keys")
    values = as_matrix(values, "values")
    queries = keys if queries is None else as_matrix(queries, "queries")
    if not keys.shape[0] == values.shape[0] == queries.shape[0]:
        raise DimensionMismatch("keys, values and queries need the same number of rows")
    state = init_state(config, keys.shape[1], values.shape[1])
    out = np.empty((keys.shape[0], values.shape[1]))
    for t in range(keys.shape[0]):
        state = step(state, keys[t], values[t], config)
        out[t] = query(state, queries[t], config)
    return out


def final_state(config, keys, values):
    keys = as_matrix(keys, "keys")
    values = as_matrix(values, "values")
    state = init_state(config, keys.shape[1], values.shape[1])
    for k, v in zip(keys, values):
        state = step(state, k, v, config)
    return state


def norm_bound(K, V, q):
    """Upper bound on ``|V^T K (K^T K)^{-1} q|``.

    ``|q| * sum_i |v_i| |k_i| / lambda_min(K^T K)``.  Raises
    :class:`RankDeficient` when ``K^T K`` is (numerically) singular.
    """
    K = as_matrix(K, "K")
    V = as_matrix(V, "V")
    q = as_vector(q, "q")
    if K.shape[0] != V.shape[0] or q.size != K.shape[1]:
        raise DimensionMismatch(f"incompatible shapes K {K.shape}, V {V.shape}, q {q.shape}")
    lam = min_eigenvalue(K.T @ K)
    if lam < RANK_TOL:
        raise RankDeficient(f"lambda_min(K^T K) = {lam:.3e}")
    mass = float(np.sum(np.linalg.norm(V, axis=1) * np.linalg.norm(K, axis=1)))
    return float(np.linalg.norm(q)) * mass / lam
