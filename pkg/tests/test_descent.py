import numpy as np
import pytest

from mfmgdm.descent import (
    DescentConfig,
    ParticleBatch,
    default_step_size,
    gd_step,
    mf_step,
    projected_step,
    run_descent,
)
from mfmgdm.energy import AcfEnergy, SquaredAcfEnergy, estimate_target
from mfmgdm.errors import ConfigurationError, DimensionError, NumericalDivergenceError
from mfmgdm.models import ArProcess, CirProcess, InitDistribution


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h * max(1.0, abs(x[idx]))
        g[idx] = (f(x + e) - f(x - e)) / (2 * e[idx])
    return g


def single_loss(spec, alpha):
    return lambda x: 0.5 * np.sum((spec.value(x) - alpha) ** 2)


def mf_loss(spec, alpha):
    return lambda xs: 0.5 * len(xs) * np.sum((spec.value(xs).mean(axis=0) - alpha) ** 2)


class TestGdStep:
    def test_zero_gamma(self):
        x = np.random.default_rng(0).standard_normal(10)
        assert np.array_equal(gd_step(x, np.array([0.3, 1.0]), AcfEnergy(10), 0.0), x)

    def test_fixed_point(self):
        x = np.random.default_rng(1).standard_normal(10)
        spec = AcfEnergy(10)
        assert np.array_equal(gd_step(x, spec.value(x), spec, 0.5), x)

    def test_gradient_oracle(self):
        spec = AcfEnergy(16)
        x = np.random.default_rng(2).standard_normal(16)
        alpha = np.array([0.2, 0.8])
        want = x - 0.01 * fd_grad(single_loss(spec, alpha), x)
        got = gd_step(x, alpha, spec, 0.01)
        assert np.max(np.abs(got - want)) / np.max(np.abs(x)) <= 1e-5

    def test_divergence(self):
        spec = SquaredAcfEnergy(12, 2)
        x = 1e120 * np.ones(12)
        with pytest.raises(NumericalDivergenceError, match="smaller step"):
            gd_step(x, np.zeros(spec.K), spec, 1.0)


class TestMfStep:
    def test_n1(self):
        spec = SquaredAcfEnergy(20, 3)
        x = np.random.default_rng(3).standard_normal((1, 20))
        alpha = np.random.default_rng(4).standard_normal(spec.K)
        assert np.max(np.abs(mf_step(x, alpha, spec, 0.1)[0] - gd_step(x[0], alpha, spec, 0.1))) <= 1e-12

    def test_identical_particles(self):
        spec = AcfEnergy(10)
        x = np.random.default_rng(5).standard_normal(10)
        out = mf_step(np.tile(x, (4, 1)), np.array([0.1, 1.2]), spec, 0.2)
        assert np.allclose(out, gd_step(x, np.array([0.1, 1.2]), spec, 0.2)[None], atol=1e-14)

    def test_gradient_oracle_n3(self):
        spec = SquaredAcfEnergy(8, 2)
        xs = np.random.default_rng(6).standard_normal((3, 8))
        alpha = np.random.default_rng(7).standard_normal(spec.K)
        # d/dx_n of (N/2)||mean Phi - alpha||^2 is J_n^T (mean Phi - alpha), exactly the step direction
        grad = fd_grad(mf_loss(spec, alpha), xs)
        got = mf_step(xs, alpha, spec, 0.01)
        assert np.max(np.abs(got - (xs - 0.01 * grad))) / np.max(np.abs(xs)) <= 1e-5

    def test_particle_batch_roundtrip(self):
        spec = AcfEnergy(6)
        b = ParticleBatch(np.ones((2, 6)), step=3)
        out = mf_step(b, np.array([0.5, 0.5]), spec, 0.1)
        assert isinstance(out, ParticleBatch) and out.step == 4 and out.mask.all()

    def test_permutation_equivariance(self):
        spec = SquaredAcfEnergy(12, 2)
        xs = np.random.default_rng(8).standard_normal((5, 12))
        perm = np.array([3, 0, 4, 1, 2])
        alpha = np.zeros(spec.K)
        assert np.allclose(mf_step(xs, alpha, spec, 0.05)[perm], mf_step(xs[perm], alpha, spec, 0.05), atol=1e-14)

    def test_shape_check(self):
        with pytest.raises(DimensionError):
            mf_step(np.ones(5), np.zeros(2), AcfEnergy(5), 0.1)


class TestProjectedStep:
    def test_nonnegative_step_unchanged(self):
        spec = AcfEnergy(8)
        x = np.full(8, 1.0)
        out, mask = projected_step(x, np.array([0.9, 0.95]), spec, 0.01)
        assert mask.all()
        assert np.array_equal(out, gd_step(x, np.array([0.9, 0.95]), spec, 0.01))

    def test_zero_gamma(self):
        x = np.abs(np.random.default_rng(9).standard_normal(8))
        out, mask = projected_step(x, np.zeros(2), AcfEnergy(8), 0.0)
        assert np.array_equal(out, x) and mask.all()

    def test_one_component_blocked(self):
        # lag-1 statistic above target: each component shrinks by gamma * resid * (neighbour sum) / d,
        # which pushes the small first component below zero and leaves the others positive
        spec = AcfEnergy(4, (1,))
        x = np.array([0.01, 2.0, 2.0, 2.0])
        alpha = np.array([0.0])
        gamma = 0.1
        prop = gd_step(x, alpha, spec, gamma)
        assert (prop < 0).tolist() == [True, False, False, False]
        out, mask = projected_step(x, alpha, spec, gamma)
        for i in range(4):  # scalar-by-scalar oracle
            want = prop[i] if prop[i] >= 0 else x[i]
            assert out[i] == want
            assert mask[i] == (prop[i] >= 0)

    def test_negative_input(self):
        with pytest.raises(ConfigurationError):
            projected_step(np.array([1.0, -0.1, 1.0]), np.zeros(2), AcfEnergy(3), 0.1)

    def test_mf_mode(self):
        spec = AcfEnergy(6, (1,))
        xs = np.abs(np.random.default_rng(10).standard_normal((3, 6))) * 0.1
        out, mask = projected_step(xs, np.array([3.0]), spec, 2.0, mode="mf")
        prop = mf_step(xs, np.array([3.0]), spec, 2.0)
        assert np.array_equal(mask, prop >= 0)
        assert np.all(out >= 0)


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(steps=0), dict(epsilon=-1.0), dict(batch_size=0),
                                    dict(mode="adam"), dict(gamma_scale=-1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            DescentConfig(**kw)

    def test_step_size(self):
        spec = AcfEnergy(16)
        x = np.random.default_rng(11).standard_normal((2, 3, 16))
        jac = spec.jacobian(x)
        lam = np.max(np.linalg.eigvalsh(jac @ np.swapaxes(jac, -1, -2)))
        assert np.isclose(default_step_size(x, spec, "mgdm", 0.5), 0.5 / lam)


class TestRunDescent:
    def setup_method(self):
        self.spec = AcfEnergy(32)
        self.alpha = np.array([0.1, 1.0])
        self.init = InitDistribution.gaussian(32, 1.0)

    def test_fixed_steps(self):
        cfg = DescentConfig(steps=7, epsilon=np.inf, batch_size=2, mode="mgdm", init=self.init, replicas=2)
        res = run_descent(cfg, self.alpha, self.spec)
        assert res.n_steps == 7 and res.stopped == "max_steps"
        assert res.trace.step_logdets.shape == (7, 2)
        cfg = DescentConfig(steps=7, epsilon=None, batch_size=2, mode="mgdm", init=self.init, replicas=2)
        assert run_descent(cfg, self.alpha, self.spec).n_steps == 7

    def test_start_inside(self):
        z = self.init.sample(0, (1, 1))
        alpha = self.spec.value(z[0, 0])
        cfg = DescentConfig(steps=5, epsilon=1e-12, mode="mf", init=self.init)
        res = run_descent(cfg, alpha, self.spec, init_paths=z)
        assert res.n_steps == 0 and np.array_equal(res.batch.paths, z)

    def test_mf_converges(self):
        proc = ArProcess((0.1,), np.sqrt(0.99), 128)
        spec = AcfEnergy(128)
        est = estimate_target(proc.sample(1, 256), spec)
        eps = est.epsilon(32)
        cfg = DescentConfig(steps=200, epsilon=eps, batch_size=32, mode="mf", init=InitDistribution.gaussian(128, est.alpha[1]),
                            replicas=2, track_logdet=False)
        res = run_descent(cfg, est.alpha, spec)
        d = [r.energy_distance for r in res.records]
        assert res.stopped == "epsilon" and d[-1] <= eps
        assert np.all(np.diff(d[3:]) <= 1e-12)

    def test_deterministic(self):
        cfg = DescentConfig(steps=5, batch_size=3, mode="mf", init=self.init, replicas=2, seed=4)
        a = run_descent(cfg, self.alpha, self.spec)
        b = run_descent(cfg, self.alpha, self.spec)
        assert np.array_equal(a.batch.paths, b.batch.paths)
        assert np.array_equal(a.trace.step_logdets, b.trace.step_logdets)

    def test_divergence_carries_partial(self):
        cfg = DescentConfig(steps=50, gamma=5e3, batch_size=1, mode="mgdm", init=self.init, divergence_patience=3)
        with pytest.raises(NumericalDivergenceError) as info:
            run_descent(cfg, self.alpha, self.spec)
        assert info.value.partial is not None and len(info.value.partial["records"]) >= 1

    def test_projected_stays_nonnegative(self):
        proc = CirProcess(0.5, 1.0, 1.0, 16)
        spec = AcfEnergy(16)
        est = estimate_target(proc.sample(0, 128), spec)
        init = InitDistribution.exponential(16, 1.0)
        cfg = DescentConfig(steps=20, gamma_scale=2.0, batch_size=4, mode="mgdm", projection=True, init=init, replicas=2)
        res = run_descent(cfg, est.alpha, spec)
        assert np.all(res.batch.paths >= 0)
        assert np.all(np.isfinite(res.trace.step_logdets))

    def test_projection_needs_positive_init(self):
        cfg = DescentConfig(steps=2, projection=True, init=self.init)
        with pytest.raises(ConfigurationError):
            run_descent(cfg, self.alpha, self.spec)

    def test_logdet_interpolation(self):
        cfg = DescentConfig(steps=9, batch_size=2, mode="mf", init=self.init, logdet_every=3)
        res = run_descent(cfg, self.alpha, self.spec)
        ev = res.trace.evaluated
        assert ev.tolist() == [t % 3 == 0 for t in range(9)]
        full = run_descent(DescentConfig(steps=9, batch_size=2, mode="mf", init=self.init), self.alpha, self.spec)
        assert np.allclose(res.trace.step_logdets[ev], full.trace.step_logdets[ev])

    def test_alpha_shape(self):
        with pytest.raises(DimensionError):
            run_descent(DescentConfig(steps=1), np.zeros(3), self.spec)
