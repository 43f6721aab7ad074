"""Change-of-variables bookkeeping for gradient-descent flows.

Each descent step is an invertible map ``x -> x - gamma * grad L(x)`` whose
Jacobian is ``I - gamma * A``.  For a single path

    A = sum_k H_k(x) (Phi_k(x) - alpha_k) + J(x)^T J(x),

and for a mean-field batch of N paths the ``Nd x Nd`` Jacobian is block
diagonal plus the rank-K coupling ``(gamma/N) * calJ^T calJ``.  The fast
path uses the matrix determinant lemma on that split:

    log|det| = sum_n log|det B_n| + log|det(I_K - (gamma/N) sum_n J_n B_n^{-1} J_n^T)|,
    B_n = I_d - gamma * sum_k H_k(x_n) (mean_Phi_k - alpha_k).

Entropies follow from ``H(q_T) = H(q_0) + sum_t E[log|det J_t|]``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, OracleScaleError, SingularFlowError

log = logging.getLogger(__name__)

__all__ = [
    "FlowTrace",
    "EntropyEstimate",
    "KlEstimate",
    "BoundDiagnostics",
    "step_logdet_single",
    "step_logdet_mf_fast",
    "step_logdet_mf_dense",
    "mf_jacobian_dense",
    "step_logdet_projected",
    "entropy_estimate",
    "reverse_kl",
    "kl_from_logp",
    "local_constants",
    "entropy_rate_bound",
    "taylor_remainder",
    "taylor_order",
    "NORMALIZATIONS",
]

NORMALIZATIONS = ("total", "per-sample", "rate")
_MIN_LOG_ABS_DET = math.log(1e-300)


def _checked_slogdet(mat, what="step Jacobian"):
    sign, logabs = np.linalg.slogdet(mat)
    bad = (sign == 0) | ~np.isfinite(logabs) | (logabs < _MIN_LOG_ABS_DET)
    if np.any(bad):
        where = np.argwhere(np.atleast_1d(bad))
        particle = tuple(int(i) for i in where[0]) if where.size else None
        raise SingularFlowError(f"singular {what} (index {particle})", particle=particle)
    if np.any(sign < 0):
        log.warning("negative Jacobian determinant: step size beyond the contraction regime")
    return sign, logabs


def _identity_like(batch_shape, d):
    return np.broadcast_to(np.eye(d), batch_shape + (d, d))


def step_logdet_single(x, alpha, spec, gamma):
    """Dense ``log|det(I - gamma * (H_w + J^T J))|`` for independent paths ``(..., d)``."""
    x = np.asarray(x, dtype=float)
    if gamma == 0:
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    resid = spec.value(x) - alpha
    jac = spec.jacobian(x)
    hw = spec.weighted_hessian(x, resid)
    a = hw + np.swapaxes(jac, -1, -2) @ jac
    _, logabs = _checked_slogdet(_identity_like(x.shape[:-1], spec.d) - gamma * a)
    return logabs if np.ndim(logabs) else float(logabs)


def _block_factors(paths, resid_mean, spec, gamma, mask=None):
    """``B_n`` per particle, with masked-out components replaced by identity rows/cols."""
    d = spec.d
    lead = paths.shape[:-1]
    if spec.constant_hessian and mask is None:
        # the Hessian is the same for every particle; only the weights differ per batch
        w = np.broadcast_to(resid_mean[..., None, :], lead + (spec.K,))[..., :1, :]
        h = spec.weighted_hessian(np.zeros(w.shape[:-1] + (d,)), w)
        return np.eye(d) - gamma * h, True
    w = np.broadcast_to(resid_mean[..., None, :], lead + (spec.K,))
    b = np.eye(d) - gamma * spec.weighted_hessian(paths, w)
    if mask is not None:
        off = ~mask
        b = np.where(off[..., :, None] | off[..., None, :], 0.0, b)
        idx = np.arange(d)
        b[..., idx, idx] = np.where(off, 1.0, b[..., idx, idx])
    return b, False


def step_logdet_mf_fast(batch, alpha, spec, gamma, mask=None):
    """Mean-field log-determinant through the matrix determinant lemma.

    ``batch`` is ``(..., N, d)``; returns one value per batch.  Cost is
    ``O(N d^3 + K^3)`` (``O(d^3 + N d^2 K)`` when the energy Hessian is
    constant); the ``Nd x Nd`` matrix is never formed.  ``mask`` restricts
    the Jacobian to the active components of each particle.
    """
    paths = np.asarray(getattr(batch, "paths", batch), dtype=float)
    if paths.ndim < 2:
        raise DimensionError("mean-field batches have shape (..., N, d)")
    n = paths.shape[-2]
    if gamma == 0:
        return np.zeros(paths.shape[:-2]) if paths.ndim > 2 else 0.0
    resid = spec.value(paths).mean(axis=-2) - alpha
    jac = spec.jacobian(paths)  # (..., N, K, d)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        jac = np.where(mask[..., None, :], jac, 0.0)
    b, shared = _block_factors(paths, resid, spec, gamma, mask)
    try:
        _, logabs_b = _checked_slogdet(b, "block factor")
    except SingularFlowError as exc:
        raise SingularFlowError(f"singular d x d factor for particle {exc.particle}", exc.particle) from None
    jt = np.swapaxes(jac, -1, -2)  # (..., N, d, K)
    if shared:
        # one factorisation, all N*K right-hand sides at once
        rhs = np.moveaxis(jt, -3, -2).reshape(jt.shape[:-3] + (spec.d, n * spec.K))
        sol = np.linalg.solve(b[..., 0, :, :], rhs)
        sol = np.moveaxis(sol.reshape(jt.shape[:-3] + (spec.d, n, spec.K)), -2, -3)
        logdet_blocks = n * logabs_b[..., 0]
    else:
        sol = np.linalg.solve(b, jt)
        logdet_blocks = np.sum(logabs_b, axis=-1)
    core = np.einsum("...nkd,...ndl->...kl", jac, sol)
    small = np.eye(spec.K) - (gamma / n) * core
    _, logabs_small = _checked_slogdet(small, "K x K capacitance matrix")
    out = logdet_blocks + logabs_small
    return out if np.ndim(out) else float(out)


def mf_jacobian_dense(batch, alpha, spec, gamma, cap=4096):
    """Full ``Nd x Nd`` Jacobian of the mean-field step (test oracle)."""
    paths = np.asarray(getattr(batch, "paths", batch), dtype=float)
    if paths.ndim != 2:
        raise DimensionError("dense oracle takes one batch of shape (N, d)")
    n, d = paths.shape
    if n * d > cap:
        raise OracleScaleError(f"N*d = {n * d} exceeds the dense-oracle cap {cap}")
    resid = spec.value(paths).mean(axis=0) - alpha
    jac = spec.jacobian(paths)
    big_j = np.concatenate(list(jac), axis=1)  # K x Nd
    out = -(gamma / n) * big_j.T @ big_j
    for i in range(n):
        sl = slice(i * d, (i + 1) * d)
        out[sl, sl] += np.eye(d) - gamma * spec.weighted_hessian(paths[i], resid)
    return out


def step_logdet_mf_dense(batch, alpha, spec, gamma, cap=4096):
    """Dense log-determinant of the mean-field step (test oracle)."""
    _, logabs = np.linalg.slogdet(mf_jacobian_dense(batch, alpha, spec, gamma, cap))
    return float(logabs)


def step_logdet_projected(x, mask, alpha, spec, gamma, mode="mgdm"):
    """Log-determinant of the projected step, restricted to the updated components.

    Components that kept their previous value contribute identity rows, so
    the determinant equals that of the active sub-matrix.
    """
    x = np.asarray(getattr(x, "paths", x), dtype=float)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if mode in ("mf", "mf-mgdm"):
        return step_logdet_mf_fast(x, alpha, spec, gamma, mask=mask)
    if gamma == 0:
        return np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0
    # single-path steps are the N = 1 case of the mean-field formula
    out = step_logdet_mf_fast(x[..., None, :], alpha, spec, gamma, mask=mask[..., None, :])
    return out


# --------------------------------------------------------------------------
# Traces and estimators


@dataclass
class FlowTrace:
    """Per-step log-determinants of a batch of replicas.

    ``step_logdets`` has shape ``(T, M)``: one joint value per replica (the
    sum over its N particles for independent-path runs).  ``evaluated`` marks
    steps whose value was computed rather than interpolated.
    """

    mode: str
    n_particles: int
    d: int
    step_logdets: np.ndarray
    evaluated: np.ndarray
    init_log_density: np.ndarray | None = None
    init_entropy: float | None = None

    @property
    def n_steps(self):
        return self.step_logdets.shape[0]

    @property
    def n_replicas(self):
        return self.step_logdets.shape[1]

    def accumulated(self):
        """``(T+1, M)`` running sums, starting at zero."""
        out = np.zeros((self.n_steps + 1, self.n_replicas))
        np.cumsum(self.step_logdets, axis=0, out=out[1:])
        return out


def _normalizer(normalization, n_particles, d):
    if normalization == "total":
        return 1.0
    if normalization == "per-sample":
        return float(n_particles)
    if normalization == "rate":
        return float(n_particles * d)
    raise ConfigurationError(f"normalization must be one of {NORMALIZATIONS}")


@dataclass(frozen=True)
class EntropyEstimate:
    mean: float
    stderr: float
    normalization: str
    replica_values: np.ndarray = field(repr=False, default=None)
    n_particles: int = 1
    d: int = 1

    def to(self, normalization):
        scale = _normalizer(self.normalization, self.n_particles, self.d) / _normalizer(
            normalization, self.n_particles, self.d
        )
        vals = None if self.replica_values is None else self.replica_values * scale
        return EntropyEstimate(self.mean * scale, self.stderr * scale, normalization, vals, self.n_particles, self.d)


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    m = len(values)
    if m == 0:
        return float("nan"), float("nan")
    se = float(np.std(values, ddof=1) / math.sqrt(m)) if m > 1 else float("nan")
    return float(np.mean(values)), se


def entropy_estimate(init_entropy, trace, normalization="per-sample", step=None, init_log_density=None):
    """Entropy after ``step`` steps (default: last) of the flow.

    With ``init_log_density`` (per-replica joint ``log q_0(z)``) the Monte
    Carlo initial term is paired with each replica's log-determinants, which
    lowers the variance of downstream KL estimates; its expectation is the
    analytic ``init_entropy``.  Otherwise the analytic value is used.
    """
    acc = trace.accumulated()
    t = acc.shape[0] - 1 if step is None else int(step)
    if not 0 <= t < acc.shape[0]:
        raise ConfigurationError(f"step {t} outside trace of {acc.shape[0] - 1} steps")
    if init_log_density is None:
        init_log_density = trace.init_log_density
    if init_log_density is not None:
        init_log_density = np.asarray(init_log_density, dtype=float)
        if init_log_density.shape != (trace.n_replicas,):
            raise ConfigurationError("init_log_density must hold one value per replica")
        per_replica = -init_log_density + acc[t]
    else:
        per_replica = init_entropy + acc[t]
    scale = _normalizer(normalization, trace.n_particles, trace.d)
    per_replica = per_replica / scale
    mean, se = _mean_se(per_replica)
    return EntropyEstimate(mean, se, normalization, per_replica, trace.n_particles, trace.d)


@dataclass(frozen=True)
class KlEstimate:
    neg_entropy: float
    neg_entropy_se: float
    expected_loglik: float
    expected_loglik_se: float
    kl: float
    kl_se: float
    normalization: str
    rejected: int = 0


def reverse_kl(entropy, samples, target):
    """``KL(q || p) = -H(q) - E_q[log p]`` by Monte Carlo.

    ``samples`` is ``(M, N, d)`` matching the replicas behind ``entropy``
    (or ``(M, d)`` for N = 1).  Both terms are brought to ``entropy``'s
    normalization.  Samples with ``log p = -inf`` are dropped and counted.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[:, None, :]
    return kl_from_logp(entropy, target.log_density(samples))


def kl_from_logp(entropy, logp):
    """``reverse_kl`` from precomputed target log-densities ``(M, N)``."""
    logp = np.asarray(logp, dtype=float)
    if logp.ndim == 1:
        logp = logp[:, None]
    m, n = logp.shape
    finite = np.isfinite(logp)
    rejected = int(logp.size - np.count_nonzero(finite))
    if rejected:
        warnings.warn(f"{rejected} samples outside the target support were excluded", stacklevel=2)
    per_replica = np.where(finite, logp, 0.0).sum(axis=1) / np.maximum(finite.sum(axis=1), 1)
    keep = finite.any(axis=1)
    # per-particle mean times N is the joint log p of a batch; then rescale like the entropy
    per_replica = per_replica * n / _normalizer(entropy.normalization, n, entropy.d)
    e_logp, e_logp_se = _mean_se(per_replica[keep])
    neg_h = -entropy.mean
    if entropy.replica_values is not None and len(entropy.replica_values) == m:
        # paired estimator: the per-replica log q - log p has far smaller variance than either term
        _, kl_se = _mean_se(-entropy.replica_values[keep] - per_replica[keep])
        neg_h = float(-np.mean(entropy.replica_values[keep]))
    else:
        kl_se = math.hypot(entropy.stderr, e_logp_se)
    return KlEstimate(
        neg_entropy=neg_h,
        neg_entropy_se=entropy.stderr,
        expected_loglik=e_logp,
        expected_loglik_se=e_logp_se,
        kl=neg_h - e_logp,
        kl_se=kl_se,
        normalization=entropy.normalization,
        rejected=rejected,
    )


# --------------------------------------------------------------------------
# Entropy lower bound and Taylor checks


@dataclass
class BoundDiagnostics:
    """Per-step local constants and the accumulated entropy-rate lower bound.

    ``beta[t]`` bounds the spectral norm of every particle Jacobian at step t,
    ``eta[t]`` that of every component Hessian; ``bound`` has ``T + 1`` entries
    in nats per dimension, ``bound[0]`` being the initial entropy rate.
    """

    beta: np.ndarray
    eta: np.ndarray
    mean_distance: np.ndarray
    bound: np.ndarray
    measured: np.ndarray | None = None

    def holds(self, atol=0.0):
        if self.measured is None:
            raise ValueError("no measured entropy rate attached")
        return bool(np.all(self.measured >= self.bound - atol))


def local_constants(paths, spec):
    """Largest Jacobian and component-Hessian spectral norms over a batch ``(..., d)``."""
    paths = np.asarray(paths, dtype=float).reshape(-1, spec.d)
    jac = spec.jacobian(paths)
    beta = math.sqrt(float(np.max(np.linalg.eigvalsh(jac @ np.swapaxes(jac, -1, -2)))))
    probes = paths[:1] if spec.constant_hessian else paths
    eta = 0.0
    for k in range(spec.K):
        w = np.zeros(spec.K)
        w[k] = 1.0
        h = spec.weighted_hessian(probes, w)
        eta = max(eta, float(np.max(np.abs(np.linalg.eigvalsh(h)))))
    return beta, eta


def entropy_rate_bound(init_entropy_rate, gamma, K, n_particles, d, beta, eta, mean_distance):
    """Accumulated entropy-rate lower bound with step-local constants.

    ``rate_T >= rate_0 - 2 gamma sum_{t<T} (eta_t sqrt(K) E||mean_Phi_t - alpha||
    + K/(N d) beta_t^2)``, valid up to second order in gamma.
    """
    beta = np.asarray(beta, dtype=float)
    eta = np.asarray(eta, dtype=float)
    dist = np.asarray(mean_distance, dtype=float)
    per_step = 2.0 * gamma * (eta * math.sqrt(K) * dist + K / (n_particles * d) * beta**2)
    out = np.empty(len(per_step) + 1)
    out[0] = init_entropy_rate
    out[1:] = init_entropy_rate - np.cumsum(per_step)
    return out


def taylor_remainder(a, gamma):
    """``|log det(I - gamma A) + gamma tr A|`` for a square matrix ``A``."""
    a = np.asarray(a, dtype=float)
    _, logabs = np.linalg.slogdet(np.eye(len(a)) - gamma * a)
    return abs(logabs + gamma * np.trace(a))


def taylor_order(a, gammas=(1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5)):
    """Fitted slope of ``log remainder`` against ``log gamma``."""
    gammas = np.asarray(gammas, dtype=float)
    rem = np.array([taylor_remainder(a, g) for g in gammas])
    slope, _ = np.polyfit(np.log(gammas), np.log(rem), 1)
    return float(slope)
