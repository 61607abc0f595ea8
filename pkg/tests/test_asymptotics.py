from __future__ import annotations

import numpy as np
import pytest

from sdeasym import asymptotics as asy
from sdeasym import integrator as integ
from sdeasym.core_model import SdeSystem, zero_diffusion
from sdeasym.scenarios import build_perturbed_drift, build_power_drift


def synthetic(times, radius, floor=()):
    states = np.column_stack([radius, np.zeros_like(radius)])
    return integ.Trajectory("cartesian", np.asarray(times, float), states, list(floor), 0, 0)


@pytest.fixture(scope="module")
def power_drift_ensemble():
    sched = integ.StepSchedule(t_end=1e4, dt_max=1.0, extra_times=tuple(integ.dyadic_times(1e4, 4)))
    return integ.run_ensemble(build_power_drift(2, 0.5), 64, sched, 1)


class TestPredictedRadius:
    def test_values(self):
        assert asy.predicted_radius(asy.PowerLawModel(0.0), None, 7.0) == pytest.approx(7.0)
        assert asy.predicted_radius(asy.PowerLawModel(0.5), None, 4.0) == pytest.approx(4.0)
        assert asy.PowerLawModel(0.5).exponent == 2.0

    def test_monotone_and_linear(self):
        t = np.linspace(0, 100, 101)
        r = asy.predicted_radius(asy.PowerLawModel(-0.3), None, t)
        assert np.all(np.diff(r) > 0)
        big = asy.predicted_radius(asy.PowerLawModel(-0.3, lambda p: 2.0), None, t[1:])
        assert np.all(big > r[1:])
        np.testing.assert_array_equal(asy.predicted_radius(asy.PowerLawModel(0.0), None, t), t)

    @pytest.mark.parametrize("alpha", [-1.0, 1.0, 2.0])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            asy.PowerLawModel(alpha)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            asy.predicted_radius(asy.PowerLawModel(0.0), None, -1.0)


class TestFitPowerLaw:
    def test_noiseless(self):
        t = np.geomspace(1, 1e4, 40)
        fit = asy.fit_power_law(synthetic(t, (0.5 * t) ** 2), (1, 1e4))
        assert fit.exponent == pytest.approx(2.0, abs=1e-12)
        assert fit.prefactor == pytest.approx(0.25, abs=1e-12)

    def test_random_synthetic(self):
        rng = np.random.default_rng(0)
        t = np.geomspace(1e2, 1e4, 30)
        for _ in range(100):
            alpha, M = rng.uniform(-0.9, 0.9), rng.uniform(0.1, 5)
            model = asy.PowerLawModel(alpha, lambda p, M=M: M)
            fit = asy.fit_power_law(synthetic(t, asy.predicted_radius(model, None, t)), (1e2, 1e4))
            assert fit.exponent == pytest.approx(model.exponent, rel=1e-10)
            assert fit.prefactor == pytest.approx(model.prefactor(), rel=1e-10)

    def test_too_few_points(self):
        t = np.geomspace(1, 10, 5)
        with pytest.raises(asy.EstimatorError):
            asy.fit_power_law(synthetic(t, t), (1, 10))

    def test_exclusion_counted(self):
        t = np.geomspace(1, 100, 20)
        trs = [synthetic(t, t), synthetic(t, 2 * t, floor=[3.0])]
        fit = asy.fit_power_law(trs, (1, 100))
        assert fit.n_used == 1 and fit.excluded_paths == 1
        with pytest.raises(asy.EstimatorError, match="all paths excluded"):
            asy.fit_power_law([trs[1]], (1, 100))

    def test_power_drift(self, power_drift_ensemble):
        fit = asy.fit_power_law(power_drift_ensemble.trajectories, (1e2, 1e4))
        assert 1.9 <= fit.exponent <= 2.1
        assert fit.n_used + fit.excluded_paths == 64

    def test_power_drift_linear_case(self):
        sched = integ.StepSchedule(t_end=1e4, dt_max=1.0)
        ens = integ.run_ensemble(build_power_drift(3, 0.0), 64, sched, 1)
        fit = asy.fit_power_law(ens.trajectories, (1e2, 1e4))
        assert 0.95 <= fit.exponent <= 1.05
        assert 0.8 <= fit.prefactor <= 1.2


class TestAngleConditions:
    def test_example_regions(self):
        assert asy.check_angle_conditions(asy.AngleStabilizationSpec(2.0, 2.0, 1.0)).holds
        assert not asy.check_angle_conditions(asy.AngleStabilizationSpec(0.5, 2.0, 1.0)).holds
        assert asy.check_angle_conditions(asy.AngleStabilizationSpec(1.0, 1.3, 1.0)).holds

    def test_margins_reported(self):
        rep = asy.check_angle_conditions(asy.AngleStabilizationSpec(2.0, 2.0, 1.0))
        assert rep.drift_margin == pytest.approx(1.5) and rep.diffusion_margin == pytest.approx(0.75)

    def test_monotone_in_deltas(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            g, d1, d2 = rng.uniform(0.1, 3, 3)
            base = asy.check_angle_conditions(asy.AngleStabilizationSpec(g, d1, d2)).holds
            up = asy.check_angle_conditions(asy.AngleStabilizationSpec(g, d1 + rng.uniform(0, 1),
                                                                       d2 + rng.uniform(0, 1))).holds
            assert up or not base

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            asy.AngleStabilizationSpec(1.0, -1.0, 1.0)


class TestAngleDiagnostics:
    def test_frozen_angle(self):
        sys = SdeSystem(2, 2, lambda x: np.asarray(x, dtype=float), zero_diffusion(2, 2))
        sched = integ.StepSchedule(t_end=8.0, dt_max=0.01, extra_times=tuple(integ.dyadic_times(8.0, 3)))
        trs = integ.simulate_polar_batch(sys, 1.0, np.array([1.0, 0.0]), sched, 0, range(3))
        diag = asy.angle_stabilization_diagnostics(trs)
        assert [T for T, _ in diag.medians] == [2.0, 4.0, 8.0]
        assert all(m == 0.0 for _, m in diag.medians)

    def test_missing_checkpoint(self):
        t = np.array([1.0, 3.0, 7.0, 10.0])
        with pytest.raises(asy.EstimatorError, match="missing checkpoint"):
            asy.angle_stabilization_diagnostics([synthetic(t, t)])
        with pytest.raises(asy.EstimatorError, match="missing checkpoint"):
            asy.angle_stabilization_diagnostics([synthetic(t, t)], T_values=[10.0])

    def test_power_drift_decreasing(self, power_drift_ensemble):
        diag = asy.angle_stabilization_diagnostics(power_drift_ensemble.trajectories, [1.25e3, 2.5e3, 5e3, 1e4])
        m = [v for _, v in diag.medians]
        assert all(b < a for a, b in zip(m, m[1:]))

    def test_perturbed_planar_halves(self):
        sched = integ.StepSchedule(t_end=1e4, dt_max=1.0, extra_times=tuple(integ.dyadic_times(1e4, 4)))
        ens = integ.run_ensemble(build_perturbed_drift(2, 0.0, 0.5, 0.1), 64, sched, 1)
        m = [v for _, v in asy.angle_stabilization_diagnostics(ens.trajectories).medians]
        assert m[-1] < m[0] / 2


class TestItoDecay:
    grid = asy.default_ito_grid(1e4, 4001)
    windows = [(1e2, 1e3), (1e3, 1e4)]

    def test_zero_integrand(self):
        rep = asy.ito_integral_decay(lambda t: 0.0, 0.0, 0.6, n_paths=50, t_grid=self.grid, windows=self.windows)
        assert rep.percentile_95 == [0.0, 0.0]

    def test_growing_integrand_decays(self):
        rep = asy.ito_integral_decay(lambda t: 1 + t**0.3, 0.3, 0.9, n_paths=400, t_grid=self.grid,
                                     windows=self.windows, seed=2)
        assert rep.condition_holds
        assert rep.statistic((1e3, 1e4)) < rep.statistic((1e2, 1e3))
        assert rep.contrast_gamma == pytest.approx(0.55)

    def test_reproducible(self):
        kw = dict(n_paths=30, t_grid=self.grid, windows=self.windows, seed=4)
        a = asy.ito_integral_decay(lambda t: 1.0, 0.0, 0.6, **kw)
        b = asy.ito_integral_decay(lambda t: 1.0, 0.0, 0.6, **kw)
        assert a.percentile_95 == b.percentile_95


class TestEquivalence:
    def test_noise_free_matches(self):
        sc = build_power_drift(2, 0.5)
        sys = SdeSystem(2, 2, sc.system.drift, zero_diffusion(2, 2))
        sched = integ.StepSchedule(t_end=100.0, dt_max=0.01)
        em = integ.simulate_cartesian(sys, [1.0, 0.0], sched, 0)
        ode = integ.simulate_ode_skeleton(sys, [1.0, 0.0], sched)
        rep = asy.sde_ode_equivalence(em, ode)
        assert rep.deviation < 0.01

    def test_power_drift(self, power_drift_ensemble):
        sched = integ.StepSchedule(t_end=1e4, dt_max=1.0,
                                   checkpoint_times=tuple(power_drift_ensemble.trajectories[0].times))
        ode = integ.simulate_ode_skeleton(build_power_drift(2, 0.5).system, [1.0, 0.0], sched)
        rep = asy.sde_ode_equivalence(power_drift_ensemble.trajectories, ode)
        assert 0.9 <= rep.last_decade_median <= 1.1

    def test_grid_mismatch(self):
        t = np.geomspace(1, 10, 10)
        with pytest.raises(asy.EstimatorError):
            asy.sde_ode_equivalence([synthetic(t, t)], synthetic(t * 1.01, t))

    def test_zero_ode_radius(self):
        t = np.geomspace(1, 10, 10)
        with pytest.raises(asy.EstimatorError, match="zero"):
            asy.sde_ode_equivalence([synthetic(t, t)], synthetic(t, np.where(t > 5, 0.0, t)))


class TestLiminf:
    def test_exact_constant(self, power_drift_ensemble):
        rep = asy.liminf_lower_bound_check(power_drift_ensemble.trajectories, 1.0, 0.5)
        assert rep.pass_fraction >= 0.9

    def test_vanishing_constant(self, power_drift_ensemble):
        rep = asy.liminf_lower_bound_check(power_drift_ensemble.trajectories, 1e-12, 0.5)
        assert rep.pass_fraction == 1.0

    def test_stronger_drift(self):
        sched = integ.StepSchedule(t_end=1e4, dt_max=1.0)
        ens = integ.run_ensemble(build_power_drift(2, 0.5, drift_scale=2.0), 32, sched, 3)
        rep = asy.liminf_lower_bound_check(ens.trajectories, 1.0, 0.5)
        assert rep.pass_fraction == 1.0
        assert np.min(rep.per_path_min) > 2 * rep.threshold
