import numpy as np
import pytest

from npiv import irgnm
from npiv.diagnostics import (SyntheticProblem, concentration_probe, decompose_error, fit_source_condition,
                              lepskii_oracle_trial, lipschitz_probe, loglog_slope, synthetic_phi,
                              synthetic_rate_experiment, variance_scaling_probe)
from npiv.simulation import Scenario


def run_on(inst, m=2, steps=20, q=0.8):
    cfg = irgnm.IrgnmConfig(phi0=inst.base.x0, alpha0=1.0, q_alpha=q, m=m, R=1e6, max_steps=steps)
    return irgnm.run(inst, cfg, check_saturation=False)


class TestSyntheticProblem:
    def test_linear_source(self):
        sp = SyntheticProblem.polynomial(N=30, mu=1.5)
        assert np.allclose(sp.x_true, -sp.singular_values ** 3 * sp.omega)
        assert np.linalg.norm(sp.omega) == pytest.approx(sp.rho)

    def test_nonlinear_fixed_point(self):
        sp = SyntheticProblem.polynomial(N=30, mu=1.0, beta=0.3)
        T = sp.jacobian_with(sp.singular_values, sp.x_true)
        assert np.allclose(sp.x0 - sp.x_true, sp.source_matrix(T) @ sp.omega, atol=1e-13)

    def test_noise_level(self):
        sp = SyntheticProblem.polynomial(N=50)
        rng = np.random.default_rng(0)
        sq = [np.sum(sp.instance(0.01, rng).xi ** 2) for _ in range(4000)]
        assert np.mean(sq) == pytest.approx(1e-4, rel=0.05)

    def test_residual_vanishes_without_noise(self):
        sp = SyntheticProblem.polynomial(N=20, beta=0.2)
        inst = sp.instance(0.0)
        assert np.allclose(inst.residual_vector(sp.x_true), 0.0)

    @pytest.mark.parametrize("bad", [dict(singular_values=[1.0]), dict(singular_values=[1.0, 2.0]),
                                     dict(singular_values=[1.0, 0.5], mu=0.0),
                                     dict(singular_values=[1.0, 0.5], beta=-1.0),
                                     dict(singular_values=[1.0, 0.5], noise_profile="pink"),
                                     dict(singular_values=[1.0, 0.5], omega=np.ones(3))])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            SyntheticProblem(**bad)


class TestDecomposition:
    def test_linear_has_no_nonlinear_part(self):
        sp = SyntheticProblem.polynomial(N=40, mu=1.0)
        inst = sp.instance(1e-3, np.random.default_rng(1), der_rel=0.1)
        out = run_on(inst)
        for j in (0, 5, 12):
            d = decompose_error(inst, out, j, 2)
            assert np.linalg.norm(d.e_nl) <= 1e-12
            assert d.closure <= 1e-12

    def test_noiseless_exact_derivative(self):
        sp = SyntheticProblem.polynomial(N=40, mu=1.0)
        inst = sp.instance(0.0)
        out = run_on(inst)
        d = decompose_error(inst, out, 7, 2)
        assert np.linalg.norm(d.e_noi) == 0.0
        assert np.linalg.norm(d.e_der) <= 1e-14

    def test_approximation_rate(self):
        sp = SyntheticProblem.polynomial(N=60, mu=1.0)
        inst = sp.instance(1e-3, np.random.default_rng(0))
        out = run_on(inst)
        e = [np.linalg.norm(decompose_error(inst, out, j, 2).e_app) for j in range(2, 16)]
        assert loglog_slope(out.alphas[2:16], e).slope == pytest.approx(1.0, abs=0.05)

    def test_closure_nonlinear(self):
        sp = SyntheticProblem.polynomial(N=40, mu=1.0, beta=0.3)
        inst = sp.instance(1e-3, np.random.default_rng(2), der_rel=0.05)
        out = run_on(inst, m=3)
        for j in (0, 4, 10, 19):
            d = decompose_error(inst, out, j, 3)
            assert d.closure <= 1e-8 * max(1.0, np.linalg.norm(d.total))
            assert np.linalg.norm(d.e_nl) > 0

    def test_approximation_bounded_by_source(self):
        sp = SyntheticProblem.polynomial(N=40, mu=1.0)
        inst = sp.instance(0.0)
        out = run_on(inst, steps=10)
        for j in range(10):
            # |r_alpha(T*T) Lambda(T*T) omega| <= |Lambda(T*T) omega| = |x0 - x_true|
            assert np.linalg.norm(decompose_error(inst, out, j, 2).e_app) <= np.linalg.norm(sp.x_true) + 1e-15

    def test_requires_oracle(self, kde_problems):
        prob = kde_problems["IND"]
        out = irgnm.run(prob, irgnm.IrgnmConfig(phi0=np.zeros(14), max_steps=2), check_saturation=False)
        with pytest.raises(ValueError, match="oracle"):
            decompose_error(prob, out, 0, 1)

    def test_step_range(self):
        sp = SyntheticProblem.polynomial(N=10)
        inst = sp.instance(0.0)
        out = run_on(inst, steps=3)
        with pytest.raises(ValueError):
            decompose_error(inst, out, 3, 2)


class TestSourceFit:
    @pytest.mark.parametrize("seed", range(5))
    def test_recovers_mu(self, seed):
        omega = np.random.default_rng(seed).standard_normal(200)
        sp = SyntheticProblem.polynomial(N=200, mu=1.0, omega=omega / np.linalg.norm(omega))
        fit = fit_source_condition(np.diag(sp.singular_values), sp.x0 - sp.x_true)
        assert fit.mu == pytest.approx(1.0, abs=0.1)

    def test_white_noise_has_no_smoothness(self):
        rng = np.random.default_rng(1)
        T = np.diag(np.arange(1, 101, dtype=float) ** -1)
        fit = fit_source_condition(T, rng.standard_normal(100))
        assert fit.mu == pytest.approx(0.0, abs=0.1)

    def test_too_few_modes(self):
        with pytest.raises(ValueError, match="usable modes"):
            fit_source_condition(np.diag([1.0, 0.5, 0.25]), np.array([1.0, 0.0, 0.0]))


class TestLipschitz:
    def test_ce_is_linear(self, kde_problems, phi_true_small):
        rep = lipschitz_probe(kde_problems["CE"], phi_true_small, 0.5, n_pairs=5)
        assert rep.L_hat <= 1e-12

    @pytest.mark.parametrize("kind", ["IND", "QUANT"])
    def test_below_bound(self, kind, kde_problems, phi_true_small):
        rep = lipschitz_probe(kde_problems[kind], phi_true_small, 0.3, n_pairs=10)
        assert 0 < rep.L_hat <= rep.bound

    def test_scaling(self, kde_problems, phi_true_small):
        prob = kde_problems["IND"]
        a = lipschitz_probe(prob, phi_true_small, 0.3, n_pairs=6, rng=np.random.default_rng(5))
        b = lipschitz_probe(prob.scaled(2.0), phi_true_small, 0.3, n_pairs=6, rng=np.random.default_rng(5))
        assert b.L_hat == pytest.approx(2 * a.L_hat, rel=1e-9)
        assert b.bound == pytest.approx(2 * a.bound, rel=1e-9)


class TestNoiseProbes:
    def test_variance_needs_reps(self):
        with pytest.raises(ValueError):
            variance_scaling_probe(Scenario(), [100], [0.1], reps=19)

    def test_variance_shrinks_with_n(self):
        rep = variance_scaling_probe(Scenario(), [200, 1600], [0.15], reps=20, grid_n=12)
        assert rep.n_slope_field.slope < -0.7
        assert rep.h_slope is None
        assert len(rep.rows) == 2

    def test_concentration_needs_reps(self):
        with pytest.raises(ValueError):
            concentration_probe(Scenario(), 100, reps=499)

    def test_concentration_tails(self):
        rep = concentration_probe(Scenario(), 200, reps=500, grid_n=10, h=0.15)
        assert rep.exceedance[-1] <= 0.01       # three standard deviations
        assert np.all(np.diff(rep.exceedance) <= 0)
        assert rep.c_fit > 0


class TestSyntheticStopping:
    def test_phi_shift(self):
        phi = synthetic_phi(np.array([1.0, 0.5, 0.25]), 0.1, 2.0)
        assert np.allclose(phi.values, 0.1 * np.sqrt(2.0 / np.array([1.0, 1.0, 0.5])))

    def test_oracle_trials(self):
        sp = SyntheticProblem.polynomial(N=60, mu=1.0)
        trials = [lepskii_oracle_trial(sp, 10.0 ** -(2 + s % 3), s) for s in range(30)]
        assert np.mean([t.passed for t in trials]) >= 0.9

    def test_rate_smoke(self):
        sp = SyntheticProblem.polynomial(N=100, mu=1.0)
        fit = synthetic_rate_experiment(sp, np.logspace(-5, -3, 5), reps=5, max_steps=150)
        assert fit.expected == pytest.approx(2 / 3)
        assert fit.exponent == pytest.approx(fit.expected, abs=0.1)
        assert all(r["rmse_se"] >= 0 for r in fit.rows)

    def test_derivative_noise_plateau(self):
        sp = SyntheticProblem.polynomial(N=60, mu=1.0)
        fit = synthetic_rate_experiment(sp, [1e-8], reps=3, killed_modes=(2,), max_steps=250)
        row = fit.rows[0]
        # the killed component of x_true cannot be recovered
        assert row["delta_der"] == pytest.approx(abs(sp.x_true[2]), rel=1e-12)
        assert 0.5 * row["delta_der"] <= row["rmse"] <= 1.5 * row["delta_der"]

    @pytest.fixture(scope="class")
    @staticmethod
    def lepskii_rows():
        sp = SyntheticProblem.polynomial(N=60, mu=1.0)
        fit = synthetic_rate_experiment(sp, [1e-4, 1e-3, 1e-2], reps=10, m=2, q_alpha=0.8, max_steps=60,
                                        lepskii=True)
        return fit.rows

    def test_lepskii_within_oracle_constant(self, lepskii_rows):
        for r in lepskii_rows:
            assert r["rmse_lepskii"] <= 6 / np.sqrt(0.8) * r["rmse"]

    @pytest.mark.xfail(strict=True, reason="the 4 Phi threshold with Phi = sqrt(m / alpha) delta stops "
                                           "4-5 times above the a-priori RMSE; see the decisions ledger")
    def test_lepskii_within_factor_three(self, lepskii_rows):
        for r in lepskii_rows:
            assert r["rmse_lepskii"] <= 3 * r["rmse"]
