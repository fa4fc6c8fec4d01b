"""Plug-in variance, limiting-parameter calibration, the misspecification
bias formula, and the design-variance factor vd."""

from types import SimpleNamespace

import numpy as np
import pytest
from scipy.special import expit

from drcate.asymptotics import (
    LimitingParams,
    MisspecificationSpec,
    PseudoOutcomeKind,
    bias_formula,
    bias_integrand,
    calibrate_limits,
    fill_plugin_variance,
    pseudo_outcome_values,
    sigma2_minus_sigma1_homoscedastic,
    sigma_sq_plugin,
    sigma_sq_population,
    smooth_conditional,
    tau_tilde,
    v_of,
    variance_bias_table,
    vd,
)
from drcate.estimator import estimate_cate, pseudo_outcomes
from drcate.kernels import KernelSpec, roughness
from drcate.nuisance import ComponentSpec, Dataset, NuisanceConfig, OracleValues, assemble_nuisance
from drcate.rng import normals, substream, uniforms
from drcate.simulation import default_schedule, gen_model1, true_tau

GAUSS2 = KernelSpec("gaussian", 2, 1)


def _oracle_fit(s):
    config = NuisanceConfig(
        propensity=ComponentSpec(method="oracle"),
        outcome1=ComponentSpec(method="oracle"),
        outcome0=ComponentSpec(method="oracle"),
    )
    return assemble_nuisance(s.data, config, oracle=s.truth)


def _noisy_two_arm_sample(n, seed, r, beta_p=(0.0, 1.0, 1.0)):
    """Independent uniform covariates, noise in both arms (xi = 0.25 each)."""
    rng = substream(seed, r)
    x1 = uniforms(rng, n, -0.5, 0.5)
    x2 = uniforms(rng, n, -0.5, 0.5)
    eps1 = normals(rng, n, 0.25)
    eps0 = normals(rng, n, 0.25)
    u = rng.random(n)
    X = np.column_stack([x1, x2])
    F = np.column_stack([np.ones(n), X])
    p = expit(F @ np.asarray(beta_p))
    m1 = x1 + x2
    m0 = -0.3 * x1
    D = (u < p).astype(np.int8)
    Y = np.where(D == 1, m1 + eps1, m0 + eps0)
    data = Dataset(X=X, x1_indices=(0,), Y=Y, D=D)
    return SimpleNamespace(data=data, truth=OracleValues(p=p, m1=m1, m0=m0))


class TestVd:
    def test_diagonal_is_zero(self):
        p = np.linspace(0.01, 0.99, 99)
        assert np.max(np.abs(vd(p, p))) < 1e-12

    def test_positive_off_diagonal_at_half(self):
        p2 = np.linspace(0.01, 0.99, 99)
        vals = vd(np.full_like(p2, 0.5), p2)
        off = p2 != 0.5
        assert np.all(vals[off] > 0)

    def test_hand_computed_value(self):
        # (0.09-0.16)/(0.3*0.16) + (0.49-0.36)/(0.7*0.36) = -475/504
        assert vd(0.3, 0.4) == pytest.approx(-475.0 / 504.0, abs=1e-12)
        assert vd(0.3, 0.4) < 0  # off-diagonal values can be negative

    def test_finite_on_full_grid(self):
        p = np.linspace(0.01, 0.99, 99)
        P1, P2 = np.meshgrid(p, p)
        vals = vd(P1.ravel(), P2.ravel())
        assert np.all(np.isfinite(vals))

    def test_rejects_boundary_probabilities(self):
        with pytest.raises(ValueError):
            vd(0.0, 0.5)
        with pytest.raises(ValueError):
            vd(0.5, 1.0)

    def test_scalar_and_array_agree(self):
        got = vd(np.array([0.3, 0.5]), np.array([0.4, 0.5]))
        assert got[0] == pytest.approx(vd(0.3, 0.4))
        assert got[1] == pytest.approx(0.0, abs=1e-15)


class TestHomoscedasticGap:
    def test_scales_vd(self):
        p1 = np.array([0.3, 0.6])
        p2 = np.array([0.4, 0.6])
        got = sigma2_minus_sigma1_homoscedastic(p1, p2, 0.0625)
        assert np.allclose(got, 0.0625 * vd(p1, p2))

    def test_rejects_nonpositive_noise(self):
        with pytest.raises(ValueError):
            sigma2_minus_sigma1_homoscedastic(0.3, 0.4, 0.0)

    def test_matches_population_variance_difference(self):
        # homoscedastic two-arm noise: the conditional variance penalty for
        # a wrong propensity limit is exactly xi^2 * vd(p, p_limit)
        s = _noisy_two_arm_sample(400_000, 31, 1)
        beta_wrong = np.array([0.2, 0.5, 0.0])
        limits = LimitingParams(
            beta=beta_wrong,
            gamma1=np.zeros(3),
            gamma0=np.zeros(3),
            prop_family="intercept+all",
            out1_family="intercept+all",
            out0_family="intercept+all",
        )
        x1 = 0.1
        tau_x1 = 1.3 * x1  # E[m1 - m0 | X1 = x1] for this construction
        s1 = sigma_sq_population(s, PseudoOutcomeKind.TRUE_BOTH, None, x1, tau_x1, h=0.05)
        s2 = sigma_sq_population(s, PseudoOutcomeKind.LIMIT_PROPENSITY, limits, x1, tau_x1, h=0.05)
        p_lim = limits.propensity_at(s.data)
        gap_vals = sigma2_minus_sigma1_homoscedastic(s.truth.p, p_lim, 0.0625)
        want = smooth_conditional(s.data.X1, gap_vals, x1, h=0.05)
        got = s2.value - s1.value
        tol = 3.0 * np.sqrt(s1.se**2 + s2.se**2 + want.se**2)
        assert got == pytest.approx(want.value, abs=tol)


class TestVOf:
    def test_zero_variance(self):
        assert v_of(0.0, 1.3, GAUSS2) == 0.0

    def test_epanechnikov_roughness_factor(self):
        # R = 3/5 for the parabolic kernel
        assert v_of(0.6, 1.0, KernelSpec("epanechnikov", 2, 1)) == pytest.approx(0.36)

    def test_matches_quadrature_roughness(self):
        K = KernelSpec("gaussian", 4, 1)
        assert v_of(2.0, 0.5, K) == pytest.approx(2.0 * roughness(K) / 0.5, rel=1e-12)

    def test_monotone_in_sigma(self):
        assert v_of(2.0, 1.0, GAUSS2) > v_of(1.0, 1.0, GAUSS2)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            v_of(1.0, 0.0, GAUSS2)
        with pytest.raises(ValueError):
            v_of(-0.1, 1.0, GAUSS2)


class TestSmoothing:
    def test_constant_targets(self):
        rng = substream(32, 1)
        x = rng.uniform(-0.5, 0.5, size=(5000, 1))
        got = smooth_conditional(x, np.full(5000, 2.5), 0.2)
        assert got.value == pytest.approx(2.5, abs=1e-12)
        assert got.se == pytest.approx(0.0, abs=1e-12)

    def test_linear_trend_recovered(self):
        rng = substream(32, 2)
        x = rng.uniform(-0.5, 0.5, size=(200_000, 1))
        t = 3.0 * x[:, 0] + normals(rng, 200_000, 0.1)
        got = smooth_conditional(x, t, 0.25, h=0.02)
        assert got.value == pytest.approx(0.75, abs=5 * got.se + 1e-3)

    def test_no_mass_returns_nan(self):
        x = np.zeros((100, 1))
        got = smooth_conditional(x, np.ones(100), 10.0, kernel=KernelSpec("epanechnikov", 2, 1), h=0.5)
        assert np.isnan(got.value) and np.isnan(got.se)


class TestPluginVariance:
    def test_constant_pseudo_outcomes_give_zero(self):
        s = gen_model1(500, substream(33, 1))
        psi = np.full(500, 1.7)
        got = sigma_sq_plugin(s.data, psi, 1.7, 0.0, GAUSS2, 0.1)
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_iid_noise_matches_its_variance(self):
        s = gen_model1(50_000, substream(33, 2))
        rng = substream(33, 3)
        psi = normals(rng, 50_000, 2.0)
        got = sigma_sq_plugin(s.data, psi, 0.0, 0.1, GAUSS2, 0.05)
        assert got == pytest.approx(4.0, rel=0.1)

    def test_plugin_sd_tracks_benchmark_dispersion(self):
        # the Monte Carlo sample SD of the standardized statistic at x1=0,
        # n=5000 with oracle nuisances is about 0.2014; the plug-in sqrt(V)
        # estimates the same limit from one draw
        defaults = default_schedule("model1")
        h1 = defaults.schedule.value("h1", 5000)
        vals = []
        for r in range(1, 4):
            s = gen_model1(5000, substream(34, r))
            fit = _oracle_fit(s)
            curve = estimate_cate(s.data, fit, np.array([0.0]), defaults.kernels["K1"], h1)
            curve = fill_plugin_variance(curve, s.data, fit)
            vals.append(np.sqrt(curve.v_hat[0]))
        assert np.mean(vals) == pytest.approx(0.2014, rel=0.15)

    def test_fill_plugin_variance_handles_missing_points(self):
        s = gen_model1(400, substream(33, 4))
        fit = _oracle_fit(s)
        curve = estimate_cate(
            s.data, fit, np.array([0.0, 7.0]), KernelSpec("epanechnikov", 2, 1), 0.2
        )
        curve = fill_plugin_variance(curve, s.data, fit)
        assert curve.v_hat[0] > 0
        assert np.isnan(curve.v_hat[1])


class TestCalibration:
    def test_containing_families_recover_exact_coefficients(self):
        s = gen_model1(20_000, substream(35, 1))
        limits = calibrate_limits(s, "intercept+all", "intercept+all+prod", "intercept")
        assert np.allclose(limits.beta, [0.0, 1.0, 1.0], atol=1e-7)
        assert np.allclose(limits.gamma1, [0.0, 0.0, 0.0, 1.0], atol=1e-7)
        assert np.allclose(limits.gamma0, [0.0], atol=1e-12)

    def test_observable_fit_approaches_integrated_fit(self):
        s = gen_model1(100_000, substream(35, 2))
        rb = calibrate_limits(s, "intercept+x1", "intercept+all", "intercept")
        raw = calibrate_limits(s, "intercept+x1", "intercept+all", "intercept", rao_blackwell=False)
        assert np.allclose(rb.beta, raw.beta, atol=0.1)
        assert np.allclose(rb.gamma1, raw.gamma1, atol=0.1)

    def test_limit_propensity_stays_in_unit_interval(self):
        s = gen_model1(50_000, substream(35, 3))
        limits = calibrate_limits(s, "intercept+x1", "intercept+all", "intercept")
        p = limits.propensity_at(s.data)
        assert p.min() > 0.0 and p.max() < 1.0


class TestBiasFormula:
    def test_true_both_matches_estimator_pseudo_outcomes(self):
        s = gen_model1(2000, substream(36, 1))
        fit = _oracle_fit(s)
        # model-1 propensities stay inside the trim bounds, so the oracle
        # fit is untrimmed and the two constructions coincide exactly
        a = pseudo_outcome_values(s, PseudoOutcomeKind.TRUE_BOTH, None)
        b = pseudo_outcomes(fit, s.data)
        assert np.array_equal(a, b)

    def test_exact_limits_give_zero_bias(self):
        s = gen_model1(50_000, substream(36, 2))
        limits = calibrate_limits(s, "intercept+all", "intercept+all+prod", "intercept")
        for x1 in (-0.4, 0.0, 0.4):
            got = bias_formula(s, limits, x1)
            assert got.value == pytest.approx(0.0, abs=1e-10)

    def test_single_sided_misspecification_unbiased(self):
        # correct propensity family: the integrand vanishes through p - p~
        s = gen_model1(50_000, substream(36, 3))
        limits = calibrate_limits(s, "intercept+all", "intercept+all", "intercept")
        got = bias_formula(s, limits, 0.2)
        assert got.value == pytest.approx(0.0, abs=1e-10)

    def test_integrand_matches_brute_force_conditional_mean(self):
        # freeze 4 covariate rows, average the doubly-misspecified
        # pseudo-outcome over fresh (D, Y) draws, compare with the formula
        s = gen_model1(200_000, substream(36, 4))
        limits = calibrate_limits(s, "intercept+x1", "intercept+all", "intercept")
        rows = [100, 2001, 53_000, 177_123]
        p_t = limits.propensity_at(s.data)
        m1_t = limits.outcome1_at(s.data)
        m0_t = limits.outcome0_at(s.data)
        integrand = bias_integrand(s, limits)
        rng = substream(36, 5)
        reps = 2_000_000
        for i in rows:
            p, m1, m0 = s.truth.p[i], s.truth.m1[i], s.truth.m0[i]
            d = (rng.random(reps) < p).astype(float)
            eps = normals(rng, reps, 0.25)
            y = np.where(d == 1, m1 + eps, m0)
            psi = d * (y - m1_t[i]) / p_t[i] - (1 - d) * (y - m0_t[i]) / (1 - p_t[i]) + m1_t[i] - m0_t[i]
            want = psi.mean() - (m1 - m0)
            se = psi.std(ddof=1) / np.sqrt(reps)
            assert integrand[i] == pytest.approx(want, abs=4 * se)

    def test_tau_tilde_decomposes_into_truth_plus_bias(self):
        s = gen_model1(400_000, substream(36, 6))
        limits = calibrate_limits(s, "intercept+x1", "intercept+all", "intercept")
        for x1 in (-0.2, 0.1):
            tt = tau_tilde(s, limits, x1, h=0.03)
            b = bias_formula(s, limits, x1, h=0.03)
            tol = 4.0 * np.sqrt(tt.se**2 + b.se**2) + 1e-4
            assert tt.value - b.value == pytest.approx(true_tau(x1), abs=tol)


class TestVarianceOrdering:
    def test_wrong_outcomes_with_true_propensity_never_reduce_variance(self):
        # the penalty is ((m1-m1~) sqrt((1-p)/p) + (m0-m0~) sqrt(p/(1-p)))^2
        s = _noisy_two_arm_sample(400_000, 37, 1)
        limits = LimitingParams(
            beta=np.zeros(3),
            gamma1=np.array([0.5, 0.0, 0.0]),  # wrong on purpose
            gamma0=np.array([-0.2, 0.0, 0.0]),
            prop_family="intercept+all",
            out1_family="intercept+all",
            out0_family="intercept+all",
        )
        x1 = -0.1
        tau_x1 = 1.3 * x1
        s1 = sigma_sq_population(s, PseudoOutcomeKind.TRUE_BOTH, None, x1, tau_x1, h=0.05)
        s3 = sigma_sq_population(s, PseudoOutcomeKind.LIMIT_OUTCOMES, limits, x1, tau_x1, h=0.05)
        assert s3.value >= s1.value - 2.0 * np.sqrt(s1.se**2 + s3.se**2)

    def test_variance_bias_table_shape_and_degenerate_limits(self):
        s = gen_model1(50_000, substream(37, 2))
        limits = calibrate_limits(s, "intercept+all", "intercept+all+prod", "intercept")
        grid = np.array([-0.2, 0.0, 0.2])
        table = variance_bias_table(
            s, limits, grid, true_tau(grid), KernelSpec("gaussian", 4, 1)
        )
        assert set(table) == {"x1", "bias", "v1", "v2", "v3", "v4"}
        assert np.allclose(table["bias"], 0.0, atol=1e-10)
        # exact limits make all four pseudo-outcome kinds identical
        assert np.allclose(table["v1"], table["v2"], atol=1e-10)
        assert np.allclose(table["v1"], table["v3"], atol=1e-10)
        assert np.allclose(table["v1"], table["v4"], atol=1e-10)
        assert np.all(table["v1"] > 0)


class TestLocalPerturbation:
    def test_bias_shrinks_with_the_perturbation(self):
        # families correct for the unperturbed model, so both nuisance gaps
        # are O(scale) and their product makes the bias roughly quadratic:
        # doubling the perturbation should scale the bias by about four
        def perturbed_sample(n, scale, r):
            spec = MisspecificationSpec(
                c=scale,
                d1=scale,
                a=lambda X: np.cos(3.0 * X[:, 0]) - 0.5,
                b1=lambda X: X[:, 1] ** 2,
            )
            return gen_model1(n, substream(38, r), spec)

        n = 400_000
        x1 = 0.1
        vals = {}
        for scale, r in ((0.2, 1), (0.1, 2)):
            s = perturbed_sample(n, scale, r)
            limits = calibrate_limits(s, "intercept+all", "intercept+all+prod", "intercept")
            got = bias_formula(s, limits, x1, h=0.03)
            vals[scale] = got
        ratio = vals[0.2].value / vals[0.1].value
        assert 2.0 < ratio < 8.0
