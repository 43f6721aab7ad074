"""Quick internal consistency checks, runnable from the CLI in a few seconds."""

from __future__ import annotations

import math

import numpy as np

from .. import likelihood as lik
from ..descent import gd_step, mf_step
from ..energy import AcfEnergy, FiniteDiffEnergyAdapter, SquaredAcfEnergy
from ..models import CirProcess, InitDistribution

__all__ = ["run_selftest"]


def _fast_vs_dense():
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        for n, d in [(1, 6), (3, 8), (4, 5)]:
            spec = SquaredAcfEnergy(d, max_lag=2)
            x = rng.standard_normal((n, d))
            alpha = spec.value(x).mean(axis=0) + 0.3 * rng.standard_normal(spec.K)
            fast = lik.step_logdet_mf_fast(x, alpha, spec, 0.05)
            dense = lik.step_logdet_mf_dense(x, alpha, spec, 0.05)
            worst = max(worst, abs(fast - dense) / max(1.0, abs(dense)))
    return worst <= 1e-8, f"max relative gap {worst:.2e}"


def _n1_reduction():
    rng = np.random.default_rng(1)
    spec = AcfEnergy(16)
    x = rng.standard_normal((1, 16))
    alpha = np.array([0.2, 1.1])
    a = mf_step(x, alpha, spec, 0.1)
    b = gd_step(x, alpha, spec, 0.1)
    la = lik.step_logdet_mf_fast(x, alpha, spec, 0.1)
    lb = lik.step_logdet_single(x[0], alpha, spec, 0.1)
    gap = max(float(np.max(np.abs(a - b))), abs(la - lb))
    return gap <= 1e-10, f"gap {gap:.1e}"


def _derivatives():
    rng = np.random.default_rng(2)
    spec = SquaredAcfEnergy(12, max_lag=3)
    fd = FiniteDiffEnergyAdapter(spec)
    x = rng.standard_normal(12)
    w = rng.standard_normal(spec.K)
    j, jf = spec.jacobian(x), fd.jacobian(x)
    h, hf = spec.weighted_hessian(x, w), fd.weighted_hessian(x, w)
    ej = np.max(np.abs(j - jf)) / max(1.0, np.max(np.abs(j)))
    eh = np.max(np.abs(h - hf)) / max(1.0, np.max(np.abs(h)))
    return ej <= 1e-5 and eh <= 1e-4, f"jacobian {ej:.1e}, hessian {eh:.1e}"


def _gaussian_entropy():
    d, var = 32, 0.7
    got = InitDistribution.gaussian(d, var).entropy()
    want = 0.5 * d * math.log(2 * math.pi * math.e * var)
    return abs(got - want) <= 1e-9, f"{got:.12f} vs {want:.12f}"


def _cir_normalization():
    from scipy import integrate

    proc = CirProcess(0.5, 1.0, 1.0, 2)
    val, _ = integrate.quad(lambda r: math.exp(proc.transition_log_density(r, 0.8)), 0, np.inf, limit=200)
    return abs(val - 1) <= 1e-6, f"integral {val:.9f}"


CHECKS = [
    ("determinant fast path vs dense", _fast_vs_dense),
    ("N=1 mean-field reduces to MGDM", _n1_reduction),
    ("analytic derivatives vs finite differences", _derivatives),
    ("Gaussian initial entropy", _gaussian_entropy),
    ("CIR transition density integrates to 1", _cir_normalization),
]


def run_selftest(echo=print):
    ok_all = True
    for name, check in CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # report and continue
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return ok_all
