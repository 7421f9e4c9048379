"""Synthetic benchmarks: multi-query associative recall (MQAR) and a
switching autoregressive regression stream.

Both are evaluated with untrained layers: the key/value pairs are built
directly from the inputs and each layer is a single forward pass.
"""

import csv
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from ttreg.errors import ConfigInvalid, DimensionMismatch, EmptySequence, TooManyVectors
from ttreg.linalg import as_matrix, as_vector
from ttreg.memory import LayerConfig, init_state, query, step
from ttreg.nonparam import KernelConfig, KernelKind, KVBuffer, NonparamConfig

# Smoothing-kernel settings for the nonparametric layers on the switching-AR
# stream.  Successive keys there are ~0.16 apart, so the bandwidth keeps a
# handful of neighbours in play.
NONSTAT_BANDWIDTH = 0.15
NONSTAT_JITTER = 1e-4
DEFAULT_GAMMA = 0.95

LAYER_NAMES = (
    "linear_attention",
    "linear_attention_norm",
    "gated_la",
    "rls",
    "weighted_rls",
    "lms",
    "nlms",
    "longhorn",
    "leaky_lms",
    "gated_deltanet",
    "softmax",
    "nadaraya_watson",
    "local_linear",
    "kernel_regression",
)


def standard_layer(
    name,
    *,
    ridge=1e-6,
    gamma=DEFAULT_GAMMA,
    beta=1.0,
    delta=1.0,
    lam=0.0,
    bandwidth=NONSTAT_BANDWIDTH,
    jitter=NONSTAT_JITTER,
):
    """Build a named layer with experiment defaults.

    ``softmax`` is Nadaraya-Watson with the scaled dot-product kernel; the
    other nonparametric layers use the exponential smoothing kernel with
    ``bandwidth``.  ``gated_deltanet`` takes the gate and step size that
    ``beta`` and ``lam`` map to; values are stored unscaled, so it matches
    ``leaky_lms`` only up to the factor ``1 - beta * lam`` on the values.
    """
    smoothing = KernelConfig(KernelKind.EXP_SMOOTHING, bandwidth)
    if name == "linear_attention":
        return LayerConfig("linear_attention", ridge=ridge, name=name)
    if name == "linear_attention_norm":
        return LayerConfig("linear_attention", ridge=ridge, normalize_output=True, name=name)
    if name in ("gated_la", "weighted_rls"):
        return LayerConfig(name, gamma=gamma, ridge=ridge)
    if name in ("rls", "nlms"):
        return LayerConfig(name, ridge=ridge)
    if name == "lms":
        return LayerConfig(name, beta=beta, ridge=ridge)
    if name == "longhorn":
        return LayerConfig(name, delta=delta, ridge=ridge)
    if name == "leaky_lms":
        return LayerConfig(name, beta=beta, lam=lam, ridge=ridge)
    if name == "gated_deltanet":
        alpha = 1.0 - beta * lam
        return LayerConfig(name, alpha=alpha, eta=beta / alpha, ridge=ridge)
    if name == "softmax":
        return NonparamConfig("nadaraya_watson", KernelConfig(KernelKind.SCALED_DOT_EXP), name=name)
    if name == "nadaraya_watson":
        return NonparamConfig(name, smoothing)
    if name == "local_linear":
        return NonparamConfig(name, smoothing, regularizer=jitter)
    if name == "kernel_regression":
        return NonparamConfig(name, smoothing, regularizer=jitter)
    raise ConfigInvalid(f"unknown layer {name!r}; choose from {', '.join(LAYER_NAMES)}")


def gen_orthonormal_set(n, d, seed=0):
    """``n`` orthonormal rows in ``R^d`` from the QR factor of a seeded Gaussian."""
    if n > d:
        raise TooManyVectors(f"cannot fit {n} orthonormal vectors in R^{d}")
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((d, n)))
    # fix column signs so the factorisation is unique
    Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
    return Q.T.copy()


# --------------------------------------------------------------------------
# MQAR
# --------------------------------------------------------------------------


class EmbeddingKind(str, Enum):
    ORTHONORMAL = "orthonormal"  # cues and responses jointly orthonormal, 2P <= d
    CUES_ONLY = "cues_only"  # cues orthonormal, responses a separate orthonormal set, P <= d
    GAUSSIAN = "gaussian"  # iid N(0, 1/d) entries


@dataclass(frozen=True)
class MqarConfig:
    """Token ids ``0..P-1`` are cues; cue ``j`` maps to response ``P + j``.

    ``seq_len`` is the context length T: T/2 cue-response pairs followed by
    one query cue.
    """

    num_pairs: int = 64
    seq_len: int = 256
    d_model: int = 64
    embedding_kind: EmbeddingKind = EmbeddingKind.CUES_ONLY
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "embedding_kind", EmbeddingKind(self.embedding_kind))
        P, T, d = self.num_pairs, self.seq_len, self.d_model
        if P < 1 or d < 1:
            raise ConfigInvalid("num_pairs and d_model must be positive")
        if T < 2 or T % 2:
            raise ConfigInvalid(f"seq_len must be even and >= 2, got {T}")
        if self.embedding_kind is EmbeddingKind.ORTHONORMAL and 2 * P > d:
            raise ConfigInvalid(f"orthonormal embeddings need 2P <= d_model ({2 * P} > {d})")
        if self.embedding_kind is EmbeddingKind.CUES_ONLY and P > d:
            raise ConfigInvalid(f"cues_only embeddings need P <= d_model ({P} > {d})")


@dataclass
class MqarInstance:
    token_ids: np.ndarray  # (T + 1,)
    inputs: np.ndarray  # (T + 1, d_model)
    answer_id: int
    embeddings: np.ndarray  # (2P, d_model), rows indexed by token id
    num_pairs: int

    @property
    def response_embeddings(self):
        return self.embeddings[self.num_pairs:]


def make_embeddings(config, seed):
    P, d = config.num_pairs, config.d_model
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    emb_seed, resp_seed = seed.spawn(2)
    kind = config.embedding_kind
    if kind is EmbeddingKind.ORTHONORMAL:
        return gen_orthonormal_set(2 * P, d, emb_seed)
    if kind is EmbeddingKind.CUES_ONLY:
        return np.vstack([gen_orthonormal_set(P, d, emb_seed), gen_orthonormal_set(P, d, resp_seed)])
    return np.random.default_rng(emb_seed).standard_normal((2 * P, d)) / np.sqrt(d)


def gen_mqar(config):
    """Draw one MQAR instance; a pure function of ``config`` (seed included)."""
    P, T = config.num_pairs, config.seq_len
    emb_ss, seq_ss = np.random.SeedSequence(config.seed).spawn(2)
    embeddings = make_embeddings(config, emb_ss)
    rng = np.random.default_rng(seq_ss)
    cues = rng.integers(P, size=T // 2)
    query_cue = int(rng.choice(np.unique(cues)))
    token_ids = np.empty(T + 1, dtype=np.int64)
    token_ids[0:T:2] = cues
    token_ids[1:T:2] = cues + P
    token_ids[T] = query_cue
    return MqarInstance(
        token_ids=token_ids,
        inputs=embeddings[token_ids],
        answer_id=query_cue + P,
        embeddings=embeddings,
        num_pairs=P,
    )


def mqar_instances(num_pairs, seq_len, d_model, embedding_kind, seed, count):
    """``count`` instances derived from ``seed``.

    Instance ``i`` (embeddings included) is drawn from ``(seed, i)``, so
    layers compared at the same seed see identical instances.
    """
    out = []
    for i in range(count):
        sub = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        out.append(gen_mqar(MqarConfig(num_pairs, seq_len, d_model, embedding_kind, sub)))
    return out


def build_kv_shift(x_seq):
    """Keys from a fixed shift convolution: ``k_t = x_{t-1}`` (``k_1 = 0``); ``v_t = q_t = x_t``."""
    x = np.asarray(x_seq, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptySequence("need a non-empty (n, d) sequence")
    keys = np.zeros_like(x)
    keys[1:] = x[:-1]
    return keys, x.copy(), x.copy()


def decode_token(y, embeddings):
    """Index of the embedding row with the largest inner product with ``y`` (lowest on ties)."""
    y = as_vector(y, "y")
    E = as_matrix(embeddings, "embeddings")
    if E.shape[1] != y.size:
        raise DimensionMismatch(f"embeddings of width {E.shape[1]}, output of length {y.size}")
    return int(np.argmax(E @ y))


def write_golden(instances, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for inst in instances:
            writer.writerow([*map(int, inst.token_ids), inst.answer_id])


def read_golden(path):
    """Returns a list of ``(token_ids, answer_id)`` tuples."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                ids = [int(x) for x in row]
                rows.append((np.array(ids[:-1], dtype=np.int64), ids[-1]))
    return rows


# --------------------------------------------------------------------------
# running a layer
# --------------------------------------------------------------------------


def predict_stream(layer, keys, values, queries):
    """Row ``t`` is ``m_t(queries[t])`` where ``m_t`` has seen pairs ``0..t``.

    ``layer`` is either a parametric :class:`LayerConfig` or a
    :class:`NonparamConfig`.
    """
    keys = as_matrix(keys, "keys")
    values = as_matrix(values, "values")
    queries = as_matrix(queries, "queries")
    n = keys.shape[0]
    if values.shape[0] != n or queries.shape[0] != n:
        raise DimensionMismatch("keys, values and queries need the same number of rows")
    out = np.empty((n, values.shape[1]))
    if isinstance(layer, LayerConfig):
        state = init_state(layer, keys.shape[1], values.shape[1])
        for t in range(n):
            state = step(state, keys[t], values[t], layer)
            out[t] = query(state, queries[t], layer)
    elif isinstance(layer, NonparamConfig):
        buf = KVBuffer(keys.shape[1], values.shape[1])
        for t in range(n):
            buf.append(keys[t], values[t])
            out[t] = layer(buf, queries[t])
    else:
        raise TypeError(f"unsupported layer type {type(layer).__name__}")
    return out


def final_output(layer, keys, values, q):
    """``m_n(q)`` after all ``n`` pairs have been absorbed."""
    keys = as_matrix(keys, "keys")
    values = as_matrix(values, "values")
    if isinstance(layer, LayerConfig):
        state = init_state(layer, keys.shape[1], values.shape[1])
        for k, v in zip(keys, values):
            state = step(state, k, v, layer)
        return query(state, q, layer)
    return layer(KVBuffer.from_arrays(keys, values), q)


def eval_recall(layer, instances: Sequence[MqarInstance]):
    """Fraction of instances whose final output decodes to the right response."""
    if len(instances) == 0:
        raise ValueError("need at least one instance")
    correct = 0
    for inst in instances:
        keys, values, queries = build_kv_shift(inst.inputs)
        y = final_output(layer, keys, values, queries[-1])
        pred = decode_token(y, inst.response_embeddings) + inst.num_pairs
        correct += pred == inst.answer_id
    return correct / len(instances)


# --------------------------------------------------------------------------
# switching autoregressive stream
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NonstatConfig:
    """``k_{t+1} = a_t k_t + noise_scale * eps_t`` with ``a_t = coeff_fast`` for
    ``t < switch_step`` and ``coeff_slow`` afterwards; ``eps_t ~ N(0, Sigma)``
    with ``Sigma_ij = rho^|i-j|``.  Targets are ``v_t = |k_{t+1}|``.

    ``switch_step`` defaults to ``horizon // 4``.
    """

    key_dim: int = 64
    horizon: int = 256
    coeff_fast: float = 0.9
    coeff_slow: float = 0.999
    switch_step: int = 0
    noise_scale: float = 0.02
    rho: float = 0.3
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.switch_step == 0:
            object.__setattr__(self, "switch_step", self.horizon // 4)
        if self.key_dim < 1 or self.horizon < 2:
            raise ConfigInvalid("key_dim must be >= 1 and horizon >= 2")
        for c in (self.coeff_fast, self.coeff_slow):
            if not 0 < c < 1:
                raise ConfigInvalid(f"AR coefficients must lie in (0, 1), got {c}")
        if not 0 < self.switch_step < self.horizon:
            raise ConfigInvalid(f"switch_step must lie in (0, {self.horizon})")
        if not abs(self.rho) < 1:
            raise ConfigInvalid(f"rho must satisfy |rho| < 1, got {self.rho}")
        if self.noise_scale < 0:
            raise ConfigInvalid("noise_scale must be non-negative")


def noise_covariance(d, rho):
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def gen_nonstationary(config):
    """Return ``keys`` of shape ``(T + 1, D_k)`` and ``targets`` of shape ``(T, 1)``."""
    d, T = config.key_dim, config.horizon
    rng = np.random.default_rng(config.seed)
    chol = np.linalg.cholesky(noise_covariance(d, config.rho))
    eps = rng.standard_normal((T + 1, d)) @ chol.T
    keys = np.empty((T + 1, d))
    keys[0] = config.init_scale * eps[0]
    for t in range(1, T + 1):
        # keys[t - 1] is k_t in 1-based notation
        coeff = config.coeff_fast if t < config.switch_step else config.coeff_slow
        keys[t] = coeff * keys[t - 1] + config.noise_scale * eps[t]
    targets = np.linalg.norm(keys[1:], axis=1)[:, None]
    return keys, targets


def eval_online_loss(layer, keys, targets):
    """One-step-ahead losses ``|v_{t+1} - m_t(k_{t+1})|^2`` for ``t = 1..T-1``.

    ``m_t`` is fitted on pairs ``(k_1, v_1) .. (k_t, v_t)`` only.
    """
    keys = as_matrix(keys, "keys")
    targets = as_matrix(targets, "targets")
    T = targets.shape[0]
    if keys.shape[0] < T or T < 2:
        raise DimensionMismatch("need at least two targets and one key per target")
    preds = predict_stream(layer, keys[: T - 1], targets[: T - 1], keys[1:T])
    return np.sum((targets[1:T] - preds) ** 2, axis=1)
