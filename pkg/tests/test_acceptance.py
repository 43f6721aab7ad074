"""Acceptance suite: one printed pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the terminal summary.  The full-scale check only runs when
``MFMGDM_FULL_SCALE=1`` is set.
"""

import dataclasses
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from mfmgdm import likelihood as lik
from mfmgdm.descent import gd_step, mf_step, projected_step, run_descent, DescentConfig
from mfmgdm.energy import AcfEnergy, EnergySpec, FiniteDiffEnergyAdapter, SquaredAcfEnergy
from mfmgdm.harness.config import ExperimentConfig
from mfmgdm.harness.experiments import run_kl_trace
from mfmgdm.harness.export import export_finance
from mfmgdm.harness.finance import run_financial_pipeline
from mfmgdm.models import ArProcess, CirProcess, InitDistribution, cir_transition_sample

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data" / "synthetic_prices.csv"


class StackedEnergy(EnergySpec):
    """Concatenation of two energies, used where no single shipped energy has the wanted K."""

    def __init__(self, first, second):
        self.parts = (first, second)
        self.d = first.d
        self.K = first.K + second.K
        self.constant_hessian = first.constant_hessian and second.constant_hessian
        self.names = first.names + second.names

    def value(self, x):
        return np.concatenate([p.value(x) for p in self.parts], axis=-1)

    def jacobian(self, x):
        return np.concatenate([p.jacobian(x) for p in self.parts], axis=-2)

    def weighted_hessian(self, x, w):
        w = np.asarray(w, dtype=float)
        k = self.parts[0].K
        return self.parts[0].weighted_hessian(x, w[..., :k]) + self.parts[1].weighted_hessian(x, w[..., k:])


def energy_with_k(d, K):
    if K == 2:
        return AcfEnergy(d, (1, 0))
    if d > 4:
        return SquaredAcfEnergy(d, K - 2)
    # at d = 4 no single shipped energy has five components
    return StackedEnergy(AcfEnergy(d, (3,)), SquaredAcfEnergy(d, 2))


def perturbed_alpha(rng, spec, x, scale=0.3):
    return spec.value(x).mean(axis=0) + scale * rng.standard_normal(spec.K)


# --------------------------------------------------------------------------
# 1-5: kernels, derivatives and densities


def test_c1_fast_path_matches_dense(criterion):
    t0 = time.perf_counter()
    worst, cases = 0.0, 0
    for n in (1, 2, 4):
        for d in (4, 8, 16):
            for K in (2, 5):
                spec = energy_with_k(d, K)
                for seed in range(20):
                    rng = np.random.default_rng([n, d, K, seed])
                    x = rng.standard_normal((n, d))
                    alpha = perturbed_alpha(rng, spec, x)
                    gamma = rng.uniform(0.01, 0.2)
                    fast = lik.step_logdet_mf_fast(x, alpha, spec, gamma)
                    dense = lik.step_logdet_mf_dense(x, alpha, spec, gamma)
                    worst = max(worst, abs(fast - dense) / max(1.0, abs(dense)))
                    cases += 1
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and elapsed < 10.0
    criterion("C1 determinant fast path", ok, f"{cases} cases, max scaled gap {worst:.1e} (<= 1e-8), {elapsed:.2f}s (< 10s)")
    assert ok


def test_c2_n1_reduction(criterion):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(6, 40))
        spec = AcfEnergy(d) if seed % 2 else SquaredAcfEnergy(d, 3)
        x = rng.standard_normal((1, d))
        alpha = perturbed_alpha(rng, spec, x)
        gamma = rng.uniform(0.01, 0.2)
        step_gap = np.max(np.abs(mf_step(x, alpha, spec, gamma)[0] - gd_step(x[0], alpha, spec, gamma)))
        det_gap = abs(lik.step_logdet_mf_fast(x, alpha, spec, gamma) - lik.step_logdet_single(x[0], alpha, spec, gamma))
        worst = max(worst, step_gap, det_gap)
    ok = worst <= 1e-10
    criterion("C2 N=1 reduction", ok, f"50 seeds, max gap {worst:.1e} (<= 1e-10)")
    assert ok


DERIVATIVE_SPECS = [
    ("acf(1,0)", lambda: AcfEnergy(24, (1, 0))),
    ("acf(4,2,1,0)", lambda: AcfEnergy(24, (4, 2, 1, 0))),
    ("sq-acf", lambda: SquaredAcfEnergy(24, 5)),
    ("sq-acf centered", lambda: SquaredAcfEnergy(24, 5, center=True)),
    ("sq-acf centered squares", lambda: SquaredAcfEnergy(24, 5, center_squares=True)),
    ("sq-acf fully centered", lambda: SquaredAcfEnergy(24, 5, center=True, center_squares=True)),
]


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def test_c3_derivative_oracles(criterion):
    worst_j, worst_h = 0.0, 0.0
    for i, (_, make) in enumerate(DERIVATIVE_SPECS):
        spec = make()
        fd = FiniteDiffEnergyAdapter(spec)
        for seed in range(20):
            rng = np.random.default_rng([i, seed])
            x = rng.standard_normal(spec.d) + rng.uniform(-1, 1)
            w = rng.standard_normal(spec.K)
            worst_j = max(worst_j, rel_err(spec.jacobian(x), fd.jacobian(x)))
            worst_h = max(worst_h, rel_err(spec.weighted_hessian(x, w), fd.weighted_hessian(x, w)))
    ok = worst_j <= 1e-5 and worst_h <= 1e-4
    criterion("C3 derivative oracles", ok,
              f"{len(DERIVATIVE_SPECS)} energies x 20 seeds, jacobian {worst_j:.1e} (<= 1e-5), hessian {worst_h:.1e} (<= 1e-4)")
    assert ok


def test_c4_exact_likelihood_sanity(criterion):
    worst = 0.0
    for d, var in [(1, 1.0), (16, 0.3), (128, 1.0), (1024, 2.5)]:
        got = InitDistribution.gaussian(d, var).entropy()
        want = 0.5 * d * math.log(2 * math.pi * math.e * var)
        worst = max(worst, abs(got - want))

    # zero steps: generated law equals the initial law, target is white noise of the same variance
    d, n, m, var = 64, 8, 64, 0.8
    init = InitDistribution.gaussian(d, var)
    target = ArProcess((0.0,), math.sqrt(var), d)
    spec = AcfEnergy(d)
    cfg = DescentConfig(steps=1, batch_size=n, replicas=m, mode="mf", init=init, seed=3)
    res = run_descent(cfg, np.array([0.0, var]), spec, target=target)
    paired = lik.kl_from_logp(lik.entropy_estimate(None, res.trace, "per-sample", step=0), res.target_logp[0])
    analytic_trace = dataclasses.replace(res.trace, init_log_density=None)
    analytic = lik.kl_from_logp(lik.entropy_estimate(res.trace.init_entropy, analytic_trace, "per-sample", step=0),
                                res.target_logp[0])
    kl_ok = all(abs(k.kl) <= 3 * k.kl_se + 1e-12 for k in (paired, analytic))
    ok = worst <= 1e-9 and kl_ok
    criterion("C4 exact likelihood", ok,
              f"entropy gap {worst:.1e} (<= 1e-9); zero-step KL paired {paired.kl:.2e} +- {paired.kl_se:.1e}, "
              f"analytic-entropy {analytic.kl:.3f} +- {analytic.kl_se:.3f} (within 3 SE, M={m})")
    assert ok


CIR_GRID = [
    (0.5, 1.0, 1.0, 1.0),
    (1 / math.sqrt(2), math.sqrt(2), 1.0, 1.0),
    (1.0, 1.0, 0.5, 0.5),
    (2.0, 0.5, 1.0, 0.1),
    (0.3, 2.0, 1.5, 1.0),
]


def _cir_mass(proc, r_prev):
    f = lambda r: math.exp(proc.transition_log_density(r, r_prev))
    mid = proc.conditional_mean(r_prev)
    spread = math.sqrt(proc.conditional_variance(r_prev))
    a, b = max(mid - 5 * spread, 0.0), mid + 5 * spread
    parts = [integrate.quad(f, 0.0, a, limit=400)[0] if a > 0 else 0.0,
             integrate.quad(f, a, b, limit=400, epsabs=1e-12, epsrel=1e-12)[0],
             integrate.quad(f, b, np.inf, limit=400)[0]]
    return sum(parts)


def test_c5_cir_correctness(criterion):
    worst_mass, worst_z, draws = 0.0, 0.0, 200_000
    for i, (kappa, theta, sigma, dt) in enumerate(CIR_GRID):
        proc = CirProcess(kappa, theta, sigma, 2, dt)
        for j, r_prev in enumerate((0.2, 1.0, 3.0)):
            worst_mass = max(worst_mass, abs(_cir_mass(proc, r_prev) - 1.0))
            r = cir_transition_sample(proc, r_prev, seed=100 * i + j, size=draws)
            mean, var = r.mean(), r.var(ddof=1)
            se_mean = math.sqrt(var / draws)
            m4 = np.mean((r - mean) ** 4)
            se_var = math.sqrt((m4 - var**2) / draws)
            z = max(abs(mean - proc.conditional_mean(r_prev)) / se_mean,
                    abs(var - proc.conditional_variance(r_prev)) / se_var)
            worst_z = max(worst_z, z)
    ok = worst_mass <= 1e-6 and worst_z <= 3.0
    criterion("C5 CIR transition", ok,
              f"{len(CIR_GRID)} parameter sets x 3 starts, |mass - 1| <= {worst_mass:.1e} (<= 1e-6), "
              f"worst moment z-score {worst_z:.2f} (<= 3)")
    assert ok


# --------------------------------------------------------------------------
# 6, 7, 10: the desk-scale AR(0.1) run


@pytest.fixture(scope="module")
def desk_run():
    t0 = time.perf_counter()
    report = run_kl_trace(ExperimentConfig(), n_sweep=True)
    return report, time.perf_counter() - t0


def test_c6_desk_scale_ordering(desk_run, criterion):
    report, elapsed = desk_run
    mg, mf = report.summaries["mgdm"], report.summaries["mf"]
    mg_kl = [r.kl for r in report.rows["mgdm"]]
    a = mf.min_kl < mg.min_kl
    horizon = mg_kl[: 3 * max(mg.argmin_step, 1) + 1]
    peak = max(horizon)
    b = peak >= 1.1 * mg.min_kl
    c = mf.final_kl <= 1.05 * mf.min_kl
    rates = [r.entropy_rate for r in report.rows["mgdm"]]
    shrinking = bool(np.all(np.diff(rates) < 0))
    ok = a and b and c and shrinking and elapsed <= 900
    criterion("C6 desk-scale ordering", ok,
              f"(a) MF min {mf.min_kl:.3f} < MGDM min {mg.min_kl:.3f}: {a}; "
              f"(b) MGDM peak {peak:.3f} >= 1.1 x min by step {3 * max(mg.argmin_step, 1)}: {b}; "
              f"(c) MF final {mf.final_kl:.3f} <= 1.05 x min {mf.min_kl:.3f}: {c}; "
              f"MGDM entropy decreasing: {shrinking}; {elapsed:.0f}s (<= 900s)")
    assert ok


def test_c7_batch_size_monotone(desk_run, criterion):
    report, _ = desk_run
    keys = sorted(k for k in report.summaries if k.startswith("mf-N"))
    finals = [(report.summaries[k].n_particles, report.summaries[k].final_kl, report.summaries[k].final_kl_se)
              for k in keys]
    ok = all(big[1] <= small[1] + big[2] for small, big in zip(finals, finals[1:]))
    detail = ", ".join(f"N={n}: {kl:.3f} +- {se:.3f}" for n, kl, se in finals)
    criterion("C7 final KL non-increasing in N", ok, detail + " (within 1 SE)")
    assert ok


def test_c8_full_scale(criterion):
    if os.environ.get("MFMGDM_FULL_SCALE") != "1":
        criterion("C8 full-scale spot check", None, "manual; set MFMGDM_FULL_SCALE=1 to run (long)")
        pytest.skip("full-scale run is manual")
    report = run_kl_trace(ExperimentConfig(full_scale=True))
    mg, mf = report.summaries["mgdm"].min_kl, report.summaries["mf"].min_kl
    ok = abs(mg - 2.76) <= 0.3 * 2.76 and abs(mf - 0.09) <= 0.3 * 0.09
    criterion("C8 full-scale spot check", ok, f"MGDM min {mg:.3f} (2.76 +- 30%), MF min {mf:.3f} (0.09 +- 30%)")
    assert ok


def test_c10_bound_properties(desk_run, criterion):
    orders = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        b = rng.standard_normal((12, 12))
        orders.append(lik.taylor_order(b + b.T))
    report, _ = desk_run
    gaps = []
    for key in ("mgdm", "mf"):
        gaps += [r.entropy_rate - r.bound_rate for r in report.rows[key] if np.isfinite(r.bound_rate)]
    ok = min(orders) >= 1.9 and len(gaps) > 0 and min(gaps) >= 0
    criterion("C10 entropy bound", ok,
              f"min fitted Taylor order {min(orders):.3f} (>= 1.9); measured rate - bound >= {min(gaps):.2e} "
              f"over {len(gaps)} steps")
    assert ok


# --------------------------------------------------------------------------
# 9: projected descent


def _masked_dense_logdet(x, mask, alpha, spec, gamma, mode):
    n, d = x.shape
    if mode == "mf":
        jac = lik.mf_jacobian_dense(x, alpha, spec, gamma)
    else:
        jac = np.zeros((n * d, n * d))
        for i in range(n):
            r = spec.value(x[i]) - alpha
            j = spec.jacobian(x[i])
            sl = slice(i * d, (i + 1) * d)
            jac[sl, sl] = np.eye(d) - gamma * (spec.weighted_hessian(x[i], r) + j.T @ j)
    # components that keep their old value have identity rows
    off = ~mask.ravel()
    jac[off] = np.eye(n * d)[off]
    return float(np.linalg.slogdet(jac)[1])


def test_c9_projected_descent(criterion):
    # paths never leave the cone along a full CIR run
    proc = CirProcess(0.5, 1.0, 1.0, 32)
    spec = AcfEnergy(32)
    alpha = spec.value(proc.sample(0, 256)).mean(axis=0)
    lowest = np.inf
    for mode in ("mgdm", "mf"):
        x = InitDistribution.exponential(32, 1.0).sample(1, (8, 32))
        gamma = 2.0 / np.max(np.linalg.eigvalsh(spec.jacobian(x) @ np.swapaxes(spec.jacobian(x), -1, -2)))
        for _ in range(200):
            x, _mask = projected_step(x, alpha, spec, gamma, mode)
            lowest = min(lowest, float(x.min()))
    nonneg = lowest >= 0

    # crafted N=2, d=6 cases where some components are blocked
    worst, blocked = 0.0, 0
    x = np.array([[0.01, 2.0, 1.5, 0.02, 1.0, 3.0], [1.0, 0.005, 2.0, 2.5, 0.03, 1.0]])
    for spec in (AcfEnergy(6, (1,)), AcfEnergy(6, (1, 0)), SquaredAcfEnergy(6, 2)):
        alpha = np.zeros(spec.K)
        for mode in ("mgdm", "mf"):
            for gamma in (0.05, 0.2):
                _, mask = projected_step(x, alpha, spec, gamma, mode)
                blocked += int((~mask).sum())
                got = lik.step_logdet_projected(x, mask, alpha, spec, gamma, mode)
                got = float(np.sum(got))
                want = _masked_dense_logdet(x, mask, alpha, spec, gamma, mode)
                worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    ok = nonneg and worst <= 1e-8 and blocked > 0
    criterion("C9 projected descent", ok,
              f"lowest value over 200 projected steps {lowest:.2e} (>= 0); masked log-det gap {worst:.1e} (<= 1e-8), "
              f"{blocked} blocked components across crafted cases")
    assert ok


# --------------------------------------------------------------------------
# 11: financial pipeline on the shipped CSV


def test_c11_financial_pipeline(criterion, tmp_path):
    cfg = ExperimentConfig(data_file=str(DATA))
    rep = run_financial_pipeline(cfg)
    in_ball = all(r["stopped"] == "epsilon" and r["mean_energy_distance"] <= rep.epsilon for r in rep.runs.values())
    iqr_mg, iqr_mf = rep.sq_acf_iqr("mgdm"), rep.sq_acf_iqr("mf")
    narrower = bool(np.all(iqr_mg < iqr_mf))
    export_finance(rep, tmp_path / "a")
    export_finance(run_financial_pipeline(cfg), tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    ok = in_ball and narrower and same
    dists = ", ".join(f"{m} {r['mean_energy_distance']:.3f} in {r['steps']} steps" for m, r in rep.runs.items())
    criterion("C11 financial pipeline", ok,
              f"eps {rep.epsilon:.3f}: {dists}; squared-ACF IQR MGDM < MF at every lag: {narrower} "
              f"(mean {iqr_mg.mean():.4f} vs {iqr_mf.mean():.4f}); {len(files)} files byte-identical: {same}")
    assert ok
