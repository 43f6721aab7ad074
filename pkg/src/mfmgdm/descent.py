"""Gradient-descent sampling kernels and the descent driver.

Paths are stored as arrays ``(..., N, d)``: ``N`` particles of length ``d``
per batch, with arbitrary leading axes for Monte Carlo replicas.  In
``"mgdm"`` mode each particle descends its own loss ``0.5 ||Phi(x) - alpha||^2``;
in ``"mf"`` mode the particles of a batch share the mean-field loss
``(N/2) ||mean_n Phi(x_n) - alpha||^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import likelihood as lik
from ._rng import rng_from
from .errors import ConfigurationError, DimensionError, NumericalDivergenceError
from .models import InitDistribution

log = logging.getLogger(__name__)

__all__ = [
    "ParticleBatch",
    "DescentConfig",
    "StepRecord",
    "DescentResult",
    "gd_step",
    "mf_step",
    "projected_step",
    "default_step_size",
    "run_descent",
]

MODES = ("mgdm", "mf")


@dataclass
class ParticleBatch:
    paths: np.ndarray
    mask: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        self.paths = np.asarray(self.paths, dtype=float)
        if self.paths.ndim < 2:
            raise DimensionError("a particle batch has shape (..., N, d)")
        if self.mask is None:
            self.mask = np.ones(self.paths.shape, dtype=bool)
        elif self.mask.shape != self.paths.shape:
            raise DimensionError("mask shape must match the paths")

    @property
    def n_particles(self):
        return self.paths.shape[-2]

    @property
    def d(self):
        return self.paths.shape[-1]


@dataclass(frozen=True)
class DescentConfig:
    """Settings of one descent run.

    ``gamma=None`` calibrates the step as ``gamma_scale / lambda_max`` at the
    initial batch (see ``default_step_size``).  ``epsilon=None`` or ``inf``
    disables the energy-ball stop so the run lasts exactly ``steps`` steps.
    ``logdet_every=None`` evaluates log-determinants every step for
    ``d <= 256`` and every 5th step above, interpolating in between.
    """

    steps: int = 100
    gamma: float | None = None
    gamma_scale: float = 0.5
    epsilon: float | None = None
    batch_size: int = 1
    mode: str = "mgdm"
    projection: bool = False
    init: InitDistribution | None = None
    seed: int = 0
    replicas: int = 1
    track_logdet: bool = True
    logdet_every: int | None = None
    diagnostics: bool = False
    divergence_patience: int = 10

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ConfigurationError("step size gamma must be positive")
        if self.gamma_scale <= 0:
            raise ConfigurationError("gamma_scale must be positive")
        if self.steps < 1:
            raise ConfigurationError("steps must be at least 1")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigurationError("epsilon must be nonnegative")
        if self.batch_size < 1 or self.replicas < 1:
            raise ConfigurationError("batch_size and replicas must be at least 1")
        if self.logdet_every is not None and self.logdet_every < 1:
            raise ConfigurationError("logdet_every must be at least 1")


@dataclass
class StepRecord:
    step: int
    energy_distance: float
    max_distance: float
    loss: float
    logdet: float | None = None


@dataclass
class DescentResult:
    batch: ParticleBatch
    records: list
    trace: lik.FlowTrace | None
    config: DescentConfig
    gamma: float
    init_paths: np.ndarray
    stopped: str
    target_logp: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_steps(self):
        return len(self.records) - 1


def _finite_or_raise(x, gamma):
    if not np.all(np.isfinite(x)):
        raise NumericalDivergenceError(f"non-finite values after a step with gamma={gamma:g}; try a smaller step size")
    return x


def gd_step(x, alpha, spec, gamma):
    """One MGDM step ``x - gamma J(x)^T (Phi(x) - alpha)`` on each path independently."""
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        out = x - gamma * spec.vjp(x, spec.value(x) - alpha)
    return _finite_or_raise(out, gamma)


def mf_step(batch, alpha, spec, gamma):
    """One mean-field step: every particle moves along ``J(x_n)^T (mean Phi - alpha)``."""
    paths = np.asarray(getattr(batch, "paths", batch), dtype=float)
    if paths.ndim < 2:
        raise DimensionError("mean-field batches have shape (..., N, d)")
    with np.errstate(over="ignore", invalid="ignore"):
        resid = spec.value(paths).mean(axis=-2, keepdims=True) - alpha
        resid = np.broadcast_to(resid, paths.shape[:-1] + (spec.K,))
        out = paths - gamma * spec.vjp(paths, resid)
    out = _finite_or_raise(out, gamma)
    if isinstance(batch, ParticleBatch):
        return ParticleBatch(out, None, batch.step + 1)
    return out


def projected_step(x, alpha, spec, gamma, mode="mgdm"):
    """Step that keeps a component's previous value whenever the step would make it negative.

    Returns ``(updated, mask)`` where ``mask`` marks the components that moved.
    """
    paths = np.asarray(getattr(x, "paths", x), dtype=float)
    if np.any(paths < 0):
        raise ConfigurationError("projected steps need nonnegative input")
    proposal = mf_step(paths, alpha, spec, gamma) if mode == "mf" else gd_step(paths, alpha, spec, gamma)
    mask = proposal >= 0
    out = np.where(mask, proposal, paths)
    if isinstance(x, ParticleBatch):
        return ParticleBatch(out, mask, x.step + 1), mask
    return out, mask


def _residuals(paths, alpha, spec, mode):
    values = spec.value(paths)  # (..., N, K)
    if mode == "mf":
        resid = values.mean(axis=-2) - alpha  # (..., K)
        dist = np.linalg.norm(resid, axis=-1)
        loss = 0.5 * paths.shape[-2] * dist**2
    else:
        resid = values - alpha
        dist = np.linalg.norm(resid, axis=-1)  # (..., N)
        loss = 0.5 * dist**2
    return dist, loss


def default_step_size(paths, spec, mode, scale=0.5):
    """``scale / lambda_max`` with ``lambda_max`` the largest eigenvalue of the
    Gauss-Newton part of the step Jacobian at ``paths`` (``J J^T`` per path, or
    its particle average for mean-field batches)."""
    jac = spec.jacobian(np.asarray(paths, dtype=float))
    gram = jac @ np.swapaxes(jac, -1, -2)
    if mode == "mf":
        gram = gram.mean(axis=-3)
    lam = float(np.max(np.linalg.eigvalsh(gram)))
    if not lam > 0:
        raise ConfigurationError("energy Jacobian vanishes at the initial batch; set gamma explicitly")
    return scale / lam


def _step_logdets(paths, mask, alpha, spec, gamma, mode, projection):
    # joint log|det| per batch; for independent particles the sum over particles
    if projection:
        out = lik.step_logdet_projected(paths, mask, alpha, spec, gamma, mode)
        return out if mode == "mf" else out.sum(axis=-1)
    if mode == "mf":
        return lik.step_logdet_mf_fast(paths, alpha, spec, gamma)
    return lik.step_logdet_single(paths, alpha, spec, gamma).sum(axis=-1)


def _interpolate_missing(values, evaluated):
    t = np.arange(len(values))
    good = np.flatnonzero(evaluated)
    out = values.copy()
    for m in range(values.shape[1]):
        out[:, m] = np.interp(t, good, values[good, m])
    return out


def run_descent(config, alpha, spec, target=None, init_paths=None):
    """Sample the initial law and iterate the configured kernel.

    Stops after ``config.steps`` steps or as soon as every batch (mean-field)
    or every particle (MGDM) lies within ``config.epsilon`` of ``alpha``.
    With a ``target`` the target log-density of every particle is recorded at
    every step, for KL estimation through ``likelihood.reverse_kl``.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (spec.K,):
        raise DimensionError(f"alpha must have {spec.K} components")
    init = config.init or InitDistribution.gaussian(spec.d, 1.0)
    if init.d != spec.d:
        raise DimensionError("initial distribution and energy disagree on d")
    shape = (config.replicas, config.batch_size, spec.d)
    if init_paths is None:
        z = init.sample(rng_from(config.seed, "init"), shape[:-1])
    else:
        z = np.asarray(init_paths, dtype=float).reshape(shape)
    if config.projection and np.any(z < 0):
        raise ConfigurationError("projected descent needs a nonnegative initial law")
    mode = config.mode
    gamma = config.gamma if config.gamma is not None else default_step_size(z, spec, mode, config.gamma_scale)
    every = config.logdet_every or (1 if spec.d <= 256 else 5)
    eps = config.epsilon if config.epsilon is not None and np.isfinite(config.epsilon) else None

    paths = z.copy()
    mask = np.ones(shape, dtype=bool)
    records, logdets, evaluated, logps = [], [], [], []
    betas, etas, mean_dists = [], [], []
    losses = []
    rising = 0
    stopped = "max_steps"

    def partial():
        return {"records": records, "logdets": np.array(logdets), "paths": paths}

    for t in range(config.steps + 1):
        dist, loss = _residuals(paths, alpha, spec, mode)
        records.append(StepRecord(t, float(np.mean(dist)), float(np.max(dist)), float(np.mean(loss))))
        if target is not None:
            logps.append(np.asarray(target.log_density(paths), dtype=float))
        losses.append(records[-1].loss)
        if t > 0 and losses[-1] > losses[-2]:
            rising += 1
            if rising >= config.divergence_patience:
                raise NumericalDivergenceError(
                    f"loss increased for {rising} consecutive steps (gamma={gamma:g})", partial()
                )
        else:
            rising = 0
        if eps is not None and records[-1].max_distance <= eps:
            stopped = "epsilon"
            break
        if t == config.steps:
            break
        if config.diagnostics:
            beta, eta = lik.local_constants(paths, spec)
            betas.append(beta)
            etas.append(eta)
            mean_dists.append(dist)
        try:
            if config.projection:
                new_paths, step_mask = projected_step(paths, alpha, spec, gamma, mode)
            elif mode == "mf":
                new_paths, step_mask = mf_step(paths, alpha, spec, gamma), None
            else:
                new_paths, step_mask = gd_step(paths, alpha, spec, gamma), None
        except NumericalDivergenceError as exc:
            exc.partial = partial()
            raise
        if config.track_logdet:
            # Jacobian of the step just taken, evaluated at its starting point
            ok = t % every == 0
            if ok:
                val = _step_logdets(paths, step_mask, alpha, spec, gamma, mode, config.projection)
                logdets.append(np.asarray(val, dtype=float).reshape(config.replicas))
            else:
                logdets.append(np.full(config.replicas, np.nan))
            evaluated.append(ok)
        if step_mask is not None:
            mask = step_mask
        paths = new_paths

    trace = None
    if config.track_logdet:
        n_done = len(logdets)
        values = np.array(logdets).reshape(n_done, config.replicas)
        ev = np.array(evaluated, dtype=bool)
        if n_done and not np.all(ev):
            values = _interpolate_missing(values, ev)
        trace = lik.FlowTrace(
            mode=mode,
            n_particles=config.batch_size,
            d=spec.d,
            step_logdets=values,
            evaluated=ev,
            init_log_density=init.log_density(z).sum(axis=-1),
            init_entropy=config.batch_size * init.entropy(),
        )
        for rec, v in zip(records, values):
            rec.logdet = float(np.mean(v))

    diag = {}
    if config.diagnostics:
        diag = {"beta": np.array(betas), "eta": np.array(etas), "distances": mean_dists}
    return DescentResult(
        batch=ParticleBatch(paths, mask, len(records) - 1),
        records=records,
        trace=trace,
        config=config,
        gamma=gamma,
        init_paths=z,
        stopped=stopped,
        target_logp=np.array(logps) if logps else None,
        diagnostics=diag,
    )
