"""Target processes with closed-form densities, and initial distributions.

Target models (``ArProcess``, ``CirProcess``) expose ``sample(seed, n_paths)``
and a vectorised ``log_density(x)``; the latter never raises for values
outside the support and returns ``-inf`` instead, so Monte Carlo code can
count rejected samples.  The module-level ``*_log_density`` functions are
strict and raise ``DomainError``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special, stats

from ._rng import rng_from
from .errors import DimensionError, DomainError, ModelError

__all__ = [
    "ArProcess",
    "CirProcess",
    "InitDistribution",
    "ar_autocovariance",
    "ar_sample",
    "ar_log_density",
    "cir_sample",
    "cir_transition_log_density",
    "cir_log_density",
    "init_sample",
    "init_log_density",
    "init_entropy",
    "fit_positive_init",
    "log_bessel_i",
]

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# AR(p)


def is_stationary(coefficients):
    """All roots of ``1 - sum_j phi_j z^j`` strictly outside the unit circle."""
    phi = np.atleast_1d(np.asarray(coefficients, dtype=float))
    poly = np.concatenate([-phi[::-1], [1.0]])
    roots = np.roots(poly)
    return bool(np.all(np.abs(roots) > 1.0))


def ar_autocovariance(coefficients, sigma, n_lags):
    """Autocovariances ``gamma_0..gamma_{n_lags-1}`` of a stationary AR(p).

    Solves the Yule-Walker system for ``gamma_0..gamma_p`` and extends it by
    the AR recursion.
    """
    phi = np.atleast_1d(np.asarray(coefficients, dtype=float))
    p = len(phi)
    a = np.eye(p + 1)
    for k in range(p + 1):
        for j in range(1, p + 1):
            a[k, abs(k - j)] -= phi[j - 1]
    rhs = np.zeros(p + 1)
    rhs[0] = sigma**2
    gamma = list(np.linalg.solve(a, rhs))
    while len(gamma) < n_lags:
        k = len(gamma)
        gamma.append(sum(phi[j - 1] * gamma[k - j] for j in range(1, p + 1)))
    return np.array(gamma[:n_lags])


@dataclass(frozen=True)
class ArProcess:
    """``x_i = sum_j phi_j x_{i-j} + sigma * eps_i`` observed on ``d`` points.

    The first ``p`` values follow the exact stationary joint distribution, both
    when sampling and in ``log_density``.
    """

    coefficients: tuple[float, ...]
    sigma: float
    d: int

    def __post_init__(self):
        object.__setattr__(self, "coefficients", tuple(float(c) for c in np.atleast_1d(self.coefficients)))
        if self.sigma < 0:
            raise ModelError("innovation std must be nonnegative")
        if self.d < 1:
            raise ModelError("path length must be positive")
        if not is_stationary(self.coefficients):
            raise ModelError(f"AR coefficients {self.coefficients} are not stationary")

    @classmethod
    def with_unit_variance(cls, coefficients, d):
        """Choose sigma so that the stationary marginal variance is one."""
        gamma0 = ar_autocovariance(coefficients, 1.0, 1)[0]
        return cls(tuple(np.atleast_1d(coefficients)), 1.0 / math.sqrt(gamma0), d)

    @property
    def p(self):
        return len(self.coefficients)

    def autocovariance(self, n_lags):
        return ar_autocovariance(self.coefficients, self.sigma, n_lags)

    def sample(self, seed, n_paths=None):
        return ar_sample(self, seed, n_paths)

    def log_density(self, x):
        return _ar_log_density(self, np.asarray(x, dtype=float))

    def entropy_rate(self):
        """Differential entropy rate ``0.5 * log(2 pi e sigma^2)`` in nats per step."""
        return 0.5 * (LOG_2PI + 1.0) + math.log(self.sigma)

    def describe(self):
        return {"model": "ar", "coefficients": list(self.coefficients), "sigma": self.sigma, "d": self.d}


def ar_sample(proc, seed, n_paths=None):
    rng = rng_from(seed)
    shape = (1 if n_paths is None else int(n_paths), proc.d)
    p, d = proc.p, proc.d
    x = np.zeros(shape)
    if proc.sigma == 0.0:
        return x[0] if n_paths is None else x
    head = min(p, d)
    cov = _toeplitz(proc.autocovariance(head))
    chol = np.linalg.cholesky(cov)
    x[:, :head] = rng.standard_normal((shape[0], head)) @ chol.T
    phi = np.asarray(proc.coefficients)
    noise = rng.standard_normal((shape[0], d))
    for i in range(head, d):
        x[:, i] = x[:, i - p : i] @ phi[::-1] + proc.sigma * noise[:, i]
    return x[0] if n_paths is None else x


def _toeplitz(first_column):
    n = len(first_column)
    idx = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
    return np.asarray(first_column)[idx]


def _ar_log_density(proc, x):
    if x.shape[-1] != proc.d:
        raise DimensionError(f"expected paths of length {proc.d}, got {x.shape}")
    if proc.sigma == 0.0:
        raise ModelError("log-density undefined for sigma = 0")
    p, d = proc.p, proc.d
    head = min(p, d)
    cov = _toeplitz(proc.autocovariance(head))
    chol = np.linalg.cholesky(cov)
    white = np.linalg.solve(chol, x[..., :head, None])[..., 0]
    out = -0.5 * np.sum(white**2, axis=-1) - np.sum(np.log(np.diag(chol))) - 0.5 * head * LOG_2PI
    if d > head:
        phi = np.asarray(proc.coefficients)
        pred = np.zeros(x.shape[:-1] + (d - head,))
        for j in range(1, p + 1):
            pred += phi[j - 1] * x[..., head - j : d - j]
        resid = x[..., head:] - pred
        var = proc.sigma**2
        out = out - 0.5 * np.sum(resid**2, axis=-1) / var - 0.5 * (d - head) * (LOG_2PI + math.log(var))
    return out


def ar_log_density(proc, x):
    return proc.log_density(x)


# --------------------------------------------------------------------------
# Modified Bessel function in log space


_HANKEL_MIN_Z = 50.0


def _log_bessel_series(nu, z):
    # log I_nu(z) = nu log(z/2) + logsumexp_k [2k log(z/2) - lgamma(k+1) - lgamma(nu+k+1)]
    half = z / 2.0
    peak = 0.5 * (-nu + np.sqrt(nu * nu + z * z))
    k_max = int(np.ceil(np.max(peak + 12.0 * np.sqrt(peak + 1.0) + 60.0)))
    k = np.arange(k_max)
    with np.errstate(divide="ignore"):
        log_half = np.log(half)
    terms = (
        2.0 * k * log_half[..., None]
        - special.gammaln(k + 1.0)
        - special.gammaln(nu[..., None] + k + 1.0)
    )
    terms = np.where((k == 0) | (half[..., None] > 0), terms, -np.inf)
    with np.errstate(invalid="ignore"):
        return nu * log_half + special.logsumexp(terms, axis=-1)


def _log_bessel_hankel(nu, z):
    # I_nu(z) ~ e^z / sqrt(2 pi z) * sum_k (-1)^k a_k(nu) / z^k, truncated at the smallest term
    mu = 4.0 * nu * nu
    total = np.ones_like(z)
    term = np.ones_like(z)
    best = np.abs(term)
    active = np.ones(z.shape, dtype=bool)
    for k in range(1, 40):
        term = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * z)
        mag = np.abs(term)
        active &= mag < best
        total = np.where(active, total + term, total)
        best = np.where(active, mag, best)
    return z - 0.5 * np.log(2.0 * np.pi * z) + np.log(total)


def log_bessel_i(nu, z):
    """``log I_nu(z)`` for ``z >= 0``, ``nu > -1``, without overflow.

    Power series summed in log space for moderate ``z``; Hankel's asymptotic
    expansion once ``z > max(50, nu**2)``.
    """
    nu, z = np.broadcast_arrays(np.asarray(nu, dtype=float), np.asarray(z, dtype=float))
    if np.any(z < 0):
        raise DomainError("log_bessel_i needs z >= 0")
    out = np.empty(z.shape)
    big = z > np.maximum(_HANKEL_MIN_Z, nu * nu)
    if np.any(big):
        out[big] = _log_bessel_hankel(nu[big], z[big])
    small = ~big
    if np.any(small):
        flat_nu, flat_z = nu[small], z[small]
        res = np.empty(flat_z.shape)
        for start in range(0, flat_z.size, 2048):
            sl = slice(start, start + 2048)
            res[sl] = _log_bessel_series(flat_nu[sl], flat_z[sl])
        out[small] = res
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# CIR


@dataclass(frozen=True)
class CirProcess:
    """``dr = kappa (theta - r) dt + sigma sqrt(r) dW`` observed every ``dt`` on ``d`` points."""

    kappa: float
    theta: float
    sigma: float
    d: int
    dt: float = 1.0

    def __post_init__(self):
        if min(self.kappa, self.theta, self.sigma, self.dt) <= 0:
            raise ModelError("CIR parameters kappa, theta, sigma, dt must be positive")
        if self.d < 1:
            raise ModelError("path length must be positive")

    # stationary gamma law
    @property
    def shape(self):
        return 2.0 * self.kappa * self.theta / self.sigma**2

    @property
    def scale(self):
        return self.sigma**2 / (2.0 * self.kappa)

    @property
    def c(self):
        return 2.0 * self.kappa / (self.sigma**2 * -math.expm1(-self.kappa * self.dt))

    @property
    def order(self):
        # Bessel order q = 2 kappa theta / sigma^2 - 1
        return self.shape - 1.0

    def conditional_mean(self, r_prev):
        decay = math.exp(-self.kappa * self.dt)
        return self.theta + (np.asarray(r_prev) - self.theta) * decay

    def conditional_variance(self, r_prev):
        decay = math.exp(-self.kappa * self.dt)
        s2k = self.sigma**2 / self.kappa
        return np.asarray(r_prev) * s2k * decay * (1 - decay) + self.theta * s2k * (1 - decay) ** 2 / 2.0

    def stationary_log_density(self, r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = stats.gamma.logpdf(r, self.shape, scale=self.scale)
        return np.where(r > 0, out, -np.inf) if self.shape > 1 else out

    def transition_log_density(self, r_next, r_prev):
        r_next, r_prev = np.broadcast_arrays(np.asarray(r_next, float), np.asarray(r_prev, float))
        c = self.c
        q = self.order
        u = c * r_prev * math.exp(-self.kappa * self.dt)
        v = c * r_next
        out = np.full(r_next.shape, -np.inf)
        ok = (r_prev > 0) & (r_next > 0)
        if np.any(ok):
            uu, vv = u[ok], v[ok]
            z = 2.0 * np.sqrt(uu * vv)
            out[ok] = (
                math.log(c) - uu - vv + 0.5 * q * (np.log(vv) - np.log(uu)) + log_bessel_i(np.full(z.shape, q), z)
            )
        at_zero = (r_prev > 0) & (r_next == 0)
        if np.any(at_zero):
            # limit v -> 0: (v/u)^{q/2} I_q(2 sqrt(uv)) -> v^q / Gamma(q+1)
            if q > 0:
                out[at_zero] = -np.inf
            elif q == 0:
                out[at_zero] = math.log(c) - u[at_zero]
            else:
                out[at_zero] = np.inf
        return out if out.ndim else float(out)

    def sample(self, seed, n_paths=None):
        return cir_sample(self, seed, n_paths)

    def log_density(self, x):
        """Path log-density; ``-inf`` when any value lies outside the support."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise DimensionError(f"expected paths of length {self.d}, got {x.shape}")
        out = self.stationary_log_density(x[..., 0])
        if self.d > 1:
            out = out + np.sum(self.transition_log_density(x[..., 1:], x[..., :-1]), axis=-1)
        bad = np.any(x[..., :-1] <= 0, axis=-1) | (x[..., -1] < 0) | ~np.all(np.isfinite(x), axis=-1)
        return np.where(bad, -np.inf, out)

    def describe(self):
        return {"model": "cir", "kappa": self.kappa, "theta": self.theta, "sigma": self.sigma, "dt": self.dt, "d": self.d}


def cir_transition_log_density(proc, r_next, r_prev):
    if np.any(np.asarray(r_prev) <= 0):
        raise DomainError("CIR transition needs r_prev > 0")
    if np.any(np.asarray(r_next) < 0):
        raise DomainError("CIR transition needs r_next >= 0")
    return proc.transition_log_density(r_next, r_prev)


def cir_log_density(proc, x):
    x = np.asarray(x, dtype=float)
    if np.any(x[..., :-1] <= 0) or np.any(x[..., -1] < 0):
        raise DomainError("CIR path values must be positive (a zero is allowed only at the last point)")
    return proc.log_density(x)


def cir_sample(proc, seed, n_paths=None):
    """Exact sampling: stationary gamma start, noncentral chi-squared transitions."""
    rng = rng_from(seed)
    m = 1 if n_paths is None else int(n_paths)
    x = np.empty((m, proc.d))
    x[:, 0] = rng.gamma(proc.shape, proc.scale, size=m)
    c = proc.c
    df = 2.0 * proc.shape
    decay = math.exp(-proc.kappa * proc.dt)
    for i in range(1, proc.d):
        x[:, i] = rng.noncentral_chisquare(df, 2.0 * c * decay * x[:, i - 1]) / (2.0 * c)
    return x[0] if n_paths is None else x


def cir_transition_sample(proc, r_prev, seed, size=None):
    rng = rng_from(seed)
    c = proc.c
    nc = 2.0 * c * math.exp(-proc.kappa * proc.dt) * np.asarray(r_prev, dtype=float)
    return rng.noncentral_chisquare(2.0 * proc.shape, nc, size=size) / (2.0 * c)


# --------------------------------------------------------------------------
# Initial distributions


def _mills(a):
    # phi(a) / (1 - Phi(a)), stable for all a
    return math.sqrt(2.0 / math.pi) / special.erfcx(a / math.sqrt(2.0))


@dataclass(frozen=True)
class InitDistribution:
    """I.i.d. initial law for the descent.

    kind ``"gaussian"``: N(0, variance); ``"exponential"``: rate; ``"truncnorm"``:
    a normal(loc, scale) restricted to ``[0, inf)``.
    """

    kind: str
    d: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.d < 1:
            raise ModelError("dimension must be positive")
        if self.kind == "gaussian":
            if p.get("variance", 1.0) <= 0:
                raise ModelError("gaussian variance must be positive")
        elif self.kind == "exponential":
            if p.get("rate", 1.0) <= 0:
                raise ModelError("exponential rate must be positive")
        elif self.kind == "truncnorm":
            if p.get("scale", 1.0) <= 0:
                raise ModelError("truncated-normal scale must be positive")
        else:
            raise ModelError(f"unknown initial distribution {self.kind!r}")

    @classmethod
    def gaussian(cls, d, variance=1.0):
        return cls("gaussian", d, {"variance": float(variance)})

    @classmethod
    def exponential(cls, d, rate=1.0):
        return cls("exponential", d, {"rate": float(rate)})

    @classmethod
    def truncnorm(cls, d, loc=0.0, scale=1.0):
        return cls("truncnorm", d, {"loc": float(loc), "scale": float(scale)})

    @property
    def positive(self):
        return self.kind != "gaussian"

    def _truncnorm(self):
        loc, scale = self.params.get("loc", 0.0), self.params.get("scale", 1.0)
        return stats.truncnorm(-loc / scale, np.inf, loc=loc, scale=scale)

    def sample(self, seed, shape=()):
        rng = rng_from(seed)
        size = tuple(np.atleast_1d(shape).astype(int)) if shape != () else ()
        size = size + (self.d,)
        if self.kind == "gaussian":
            return math.sqrt(self.params.get("variance", 1.0)) * rng.standard_normal(size)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.params.get("rate", 1.0), size=size)
        return self._truncnorm().rvs(size=size, random_state=rng)

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d:
            raise DimensionError(f"expected paths of length {self.d}, got {x.shape}")
        if self.kind == "gaussian":
            var = self.params.get("variance", 1.0)
            per = -0.5 * (LOG_2PI + math.log(var)) - 0.5 * x**2 / var
        elif self.kind == "exponential":
            rate = self.params.get("rate", 1.0)
            per = np.where(x >= 0, math.log(rate) - rate * x, -np.inf)
        else:
            per = self._truncnorm().logpdf(x)
        return np.sum(per, axis=-1)

    def entropy(self):
        """Closed-form differential entropy of the d-dimensional law (nats)."""
        if self.kind == "gaussian":
            per = 0.5 * (LOG_2PI + 1.0 + math.log(self.params.get("variance", 1.0)))
        elif self.kind == "exponential":
            per = 1.0 - math.log(self.params.get("rate", 1.0))
        else:
            loc, scale = self.params.get("loc", 0.0), self.params.get("scale", 1.0)
            a = -loc / scale
            log_z = special.log_ndtr(-a)
            per = 0.5 * (LOG_2PI + 1.0) + math.log(scale) + log_z + 0.5 * a * _mills(a)
        return self.d * per

    def describe(self):
        return {"kind": self.kind, "d": self.d, **self.params}


def init_sample(dist, seed, shape=()):
    return dist.sample(seed, shape)


def init_log_density(dist, x):
    return dist.log_density(x)


def init_entropy(dist):
    return dist.entropy()


def _truncnorm_cv(a):
    lam = _mills(a)
    var = 1.0 + a * lam - lam * lam
    return math.sqrt(max(var, 0.0)) / (lam - a)


def fit_positive_init(mean, std, d, rtol=1e-3):
    """Maximum-entropy law on ``[0, inf)`` with the given mean and std.

    Exponential when ``std ~= mean`` (relative tolerance ``rtol``), otherwise
    the truncated normal with matching first two moments.  A coefficient of
    variation above one has no maximum-entropy solution; the exponential with
    the right mean is used and a warning is issued.
    """
    if mean <= 0 or std <= 0:
        raise ModelError("positive initial law needs positive mean and std")
    cv = std / mean
    if abs(cv - 1.0) <= rtol or cv > 1.0:
        if cv > 1.0 + rtol:
            warnings.warn(f"coefficient of variation {cv:.3f} > 1: using an exponential initial law", stacklevel=2)
        return InitDistribution.exponential(d, rate=1.0 / mean)
    lo = -(2.0 / cv + 10.0)
    a = optimize.brentq(lambda t: _truncnorm_cv(t) - cv, lo, 60.0, xtol=1e-13, rtol=1e-14)
    scale = mean / (_mills(a) - a)
    return InitDistribution.truncnorm(d, loc=-a * scale, scale=scale)
