"""Energy functions: differentiable statistics of a sample path.

An energy maps a path ``x`` of length ``d`` to a vector of ``K`` statistics.
Every evaluator broadcasts over leading axes, so ``value`` accepts a single
path ``(d,)`` as well as a batch ``(..., d)`` and returns ``(..., K)``.

The concrete energies here are all built from lagged products

    c_lag(z) = (1/d) * sum_{i >= lag} z_i z_{i - lag}

of a (possibly squared, possibly centered) transform ``z`` of the path.
Sums run over valid indices only and the normalisation is ``1/d`` for every
lag, so the lag-1/lag-0 pair reproduces the AR(1) sufficient statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

__all__ = [
    "EnergySpec",
    "AcfEnergy",
    "SquaredAcfEnergy",
    "FiniteDiffEnergyAdapter",
    "TargetEstimate",
    "acf_value",
    "acf_jacobian",
    "acf_weighted_hessian",
    "batch_mean_energy",
    "estimate_target",
]


class EnergySpec:
    """Interface for a statistic map ``R^d -> R^K``.

    Subclasses implement ``value``, ``jacobian`` and ``weighted_hessian``;
    ``vjp`` has a generic fallback through the Jacobian.  ``constant_hessian``
    advertises that ``weighted_hessian`` does not depend on ``x``, which lets
    the log-determinant code factor a single matrix per step.
    """

    K: int
    d: int
    constant_hessian: bool = False
    names: tuple[str, ...] = ()

    def value(self, x):
        raise NotImplementedError

    def jacobian(self, x):
        raise NotImplementedError

    def weighted_hessian(self, x, w):
        """Return ``sum_k w_k * Hessian(Phi_k)(x)`` with shape ``(..., d, d)``."""
        raise NotImplementedError

    def vjp(self, x, w):
        """Return ``J(x)^T w``, shape ``(..., d)``."""
        jac = self.jacobian(x)
        return np.einsum("...kd,...k->...d", jac, np.asarray(w, dtype=float))

    def _check_path(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.d,):
            raise DimensionError(f"expected paths of length {self.d}, got shape {x.shape}")
        return x

    def _check_weights(self, x, w):
        w = np.asarray(w, dtype=float)
        if w.shape[-1:] != (self.K,):
            raise DimensionError(f"expected {self.K} weights, got shape {w.shape}")
        return w


def _lag_product(z, lag):
    d = z.shape[-1]
    return np.sum(z[..., lag:] * z[..., : d - lag], axis=-1) / d


def _lag_gradient(z, lag):
    # gradient of c_lag w.r.t. z; for lag 0 this is 2z/d
    d = z.shape[-1]
    g = np.zeros_like(z)
    g[..., lag:] += z[..., : d - lag]
    g[..., : d - lag] += z[..., lag:]
    return g / d


def _lag_band(d, lag):
    return (np.eye(d, k=lag) + np.eye(d, k=-lag)) / d


def _center_matrix_sides(h):
    # P h P with P = I - 11^T/d
    return (
        h
        - h.mean(axis=-1, keepdims=True)
        - h.mean(axis=-2, keepdims=True)
        + h.mean(axis=(-2, -1), keepdims=True)
    )


@dataclass(frozen=True)
class _LagGroup:
    """Lagged products of one transform of the path."""

    lags: tuple[int, ...]
    squared: bool = False
    centered: bool = False

    def bands(self, d):
        return np.stack([_lag_band(d, lag) for lag in self.lags])

    def transform(self, x):
        z = x * x if self.squared else x
        if self.centered:
            z = z - z.mean(axis=-1, keepdims=True)
        return z

    def values(self, x):
        z = self.transform(x)
        return [_lag_product(z, lag) for lag in self.lags]

    def _pull_back(self, x, g_z):
        # chain rule from the transformed signal back to x
        if self.centered:
            g_z = g_z - g_z.mean(axis=-1, keepdims=True)
        if self.squared:
            g_z = 2.0 * x * g_z
        return g_z

    def gradients(self, x):
        z = self.transform(x)
        return [self._pull_back(x, _lag_gradient(z, lag)) for lag in self.lags]

    def vjp(self, x, w):
        z = self.transform(x)
        g = np.zeros_like(z)
        for j, lag in enumerate(self.lags):
            g += w[..., j, None] * _lag_gradient(z, lag)
        return self._pull_back(x, g)

    def weighted_hessian(self, x, w):
        d = x.shape[-1]
        h = np.tensordot(w, self.bands(d), axes=([-1], [0]))
        if not self.squared:
            return _center_matrix_sides(h) if self.centered else h
        z = self.transform(x)
        g_z = np.einsum("...ij,...j->...i", h, z)
        if self.centered:
            h = _center_matrix_sides(h)
            g_z = g_z - g_z.mean(axis=-1, keepdims=True)
        scale = 2.0 * x
        out = scale[..., :, None] * h * scale[..., None, :]
        idx = np.arange(d)
        out[..., idx, idx] += 2.0 * g_z
        return out


class _LagProductEnergy(EnergySpec):
    def __init__(self, d, groups):
        self.d = int(d)
        self.groups = tuple(groups)
        self.K = sum(len(g.lags) for g in self.groups)
        self.constant_hessian = not any(g.squared for g in self.groups)
        if self.d < 1:
            raise ConfigurationError("path length d must be positive")
        for g in self.groups:
            for lag in g.lags:
                if lag < 0 or lag >= self.d:
                    raise ConfigurationError(f"lag {lag} invalid for path length {self.d}")

    def _split(self, w):
        out, start = [], 0
        for g in self.groups:
            out.append(w[..., start : start + len(g.lags)])
            start += len(g.lags)
        return out

    def value(self, x):
        x = self._check_path(x)
        return np.stack([v for g in self.groups for v in g.values(x)], axis=-1)

    def jacobian(self, x):
        x = self._check_path(x)
        return np.stack([r for g in self.groups for r in g.gradients(x)], axis=-2)

    def vjp(self, x, w):
        x = self._check_path(x)
        w = self._check_weights(x, w)
        return sum(g.vjp(x, wg) for g, wg in zip(self.groups, self._split(w)))

    def weighted_hessian(self, x, w):
        x = self._check_path(x)
        w = self._check_weights(x, w)
        w = np.broadcast_to(w, x.shape[:-1] + (self.K,))
        h = sum(g.weighted_hessian(x, wg) for g, wg in zip(self.groups, self._split(w)))
        if self.constant_hessian and not any(g.centered for g in self.groups):
            return h  # plain band sums are exactly symmetric
        return 0.5 * (h + np.swapaxes(h, -1, -2))


class AcfEnergy(_LagProductEnergy):
    """Uncentered autocovariances ``(1/d) sum_i x_i x_{i-lag}`` at the given lags.

    The default ``lags=(1, 0)`` gives the AR(1) sufficient statistics in the
    order (lag-1 product, mean square).  The Hessian is a constant band matrix.
    """

    def __init__(self, d, lags=(1, 0)):
        lags = tuple(int(lag) for lag in lags)
        if not lags:
            raise ConfigurationError("at least one lag is required")
        if len(set(lags)) != len(lags):
            raise ConfigurationError(f"duplicate lags in {lags}")
        super().__init__(d, [_LagGroup(lags)])
        self.lags = lags
        self.names = tuple(f"acf_lag{lag}" for lag in lags)

    def __repr__(self):
        return f"AcfEnergy(d={self.d}, lags={self.lags})"


class SquaredAcfEnergy(_LagProductEnergy):
    """Variance, lag-1 autocovariance and autocovariances of ``x**2`` at lags 1..max_lag.

    Component order: ``[var(x), acov_1(x), acov_1(x^2), ..., acov_L(x^2)]``.
    By default all moments are uncentered; ``center`` centers ``x`` and
    ``center_squares`` centers ``x**2`` before the lagged products.
    """

    def __init__(self, d, max_lag=20, center=False, center_squares=False):
        max_lag = int(max_lag)
        if max_lag < 1:
            raise ConfigurationError("max_lag must be at least 1")
        if max_lag + 1 >= d:
            raise ConfigurationError(f"max_lag={max_lag} needs paths longer than {max_lag + 1}, got d={d}")
        groups = [
            _LagGroup((0, 1), squared=False, centered=center),
            _LagGroup(tuple(range(1, max_lag + 1)), squared=True, centered=center_squares),
        ]
        super().__init__(d, groups)
        self.max_lag = max_lag
        self.center = center
        self.center_squares = center_squares
        self.names = ("var", "acov1") + tuple(f"sq_acov{lag}" for lag in range(1, max_lag + 1))

    def __repr__(self):
        return (
            f"SquaredAcfEnergy(d={self.d}, max_lag={self.max_lag}, "
            f"center={self.center}, center_squares={self.center_squares})"
        )


def acf_value(x, lags=(1, 0)):
    x = np.asarray(x, dtype=float)
    return AcfEnergy(x.shape[-1], lags).value(x)


def acf_jacobian(x, lags=(1, 0)):
    x = np.asarray(x, dtype=float)
    return AcfEnergy(x.shape[-1], lags).jacobian(x)


def acf_weighted_hessian(x, lags, w):
    x = np.asarray(x, dtype=float)
    return AcfEnergy(x.shape[-1], lags).weighted_hessian(x, w)


class FiniteDiffEnergyAdapter(EnergySpec):
    """Finite-difference derivatives of a wrapped energy's ``value``.

    Test oracle only.  The Jacobian uses central differences with step
    ``h * max(|x_i|, 1)``; the weighted Hessian uses the four-point mixed
    second difference of ``w . Phi`` with the coarser ``hessian_h`` (second
    differences lose ``eps / h**2`` to round-off).  Single paths only.
    """

    def __init__(self, spec, h=1e-5, hessian_h=1e-3):
        self.spec = spec
        self.K = spec.K
        self.d = spec.d
        self.h = h
        self.hessian_h = hessian_h
        self.names = spec.names

    def value(self, x):
        return self.spec.value(x)

    def _steps(self, x, rel):
        return rel * np.maximum(np.abs(x), 1.0)

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DimensionError("finite-difference oracle evaluates one path at a time")
        step = self._steps(x, self.h)
        shift = np.diag(step)
        fwd = self.spec.value(x + shift)
        bwd = self.spec.value(x - shift)
        return ((fwd - bwd) / (2.0 * step[:, None])).T

    def weighted_hessian(self, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        if x.shape != (self.d,):
            raise DimensionError("finite-difference oracle evaluates one path at a time")
        step = self._steps(x, self.hessian_h)
        d = self.d
        shift = np.diag(step)
        out = np.empty((d, d))
        for i in range(d):
            # all (i, j) corner points in one batched evaluation
            pp = x + shift[i] + shift
            pm = x + shift[i] - shift
            mp = x - shift[i] + shift
            mm = x - shift[i] - shift
            f = [self.spec.value(p) @ w for p in (pp, pm, mp, mm)]
            out[i] = (f[0] - f[1] - f[2] + f[3]) / (4.0 * step[i] * step)
        return 0.5 * (out + out.T)


def _paths(batch):
    paths = np.asarray(getattr(batch, "paths", batch), dtype=float)
    if paths.ndim == 1:
        paths = paths[None, :]
    return paths


def batch_mean_energy(batch, spec):
    """Mean energy over the particles (second-to-last axis) of a batch."""
    paths = _paths(batch)
    if paths.shape[-2] == 0:
        raise ConfigurationError("batch_mean_energy needs at least one particle")
    return spec.value(paths).mean(axis=-2)


@dataclass(frozen=True)
class TargetEstimate:
    alpha: np.ndarray
    std: np.ndarray
    n_paths: int

    def epsilon(self, n_particles=1):
        """Default tolerance: the norm of the per-component std, shrunk by sqrt(N).

        ``||std||_2`` equals ``s * sqrt(K)`` when all components share the
        scale ``s``; a batch mean of N independent paths fluctuates sqrt(N)
        times less than a single path.
        """
        return float(np.linalg.norm(self.std) / np.sqrt(n_particles))


def estimate_target(data, spec):
    """Average energy over ``M`` observed paths and its per-component sample std."""
    paths = _paths(data)
    if paths.shape[0] < 1:
        raise ConfigurationError("estimate_target needs at least one path")
    values = spec.value(paths)
    std = values.std(axis=0, ddof=1) if len(values) > 1 else np.zeros(spec.K)
    return TargetEstimate(alpha=values.mean(axis=0), std=std, n_paths=len(values))
