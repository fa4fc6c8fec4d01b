"""Data-generating models, benchmark defaults, combination wiring, and the
Monte Carlo engine."""

import numpy as np
import pytest
from scipy.special import ndtri

from drcate.asymptotics import MisspecificationSpec
from drcate.kernels import check_rate_conditions
from drcate.rng import substream
from drcate.simulation import (
    COMBINATIONS,
    DgpSpec,
    McConfig,
    combination_config,
    default_schedule,
    gen_model1,
    gen_model2,
    generate,
    model1_x2_mean,
    run_mc,
    true_tau,
)


class TestTruthFunctions:
    def test_effect_curve_values(self):
        assert true_tau(0.0) == pytest.approx(0.0)
        assert true_tau(-0.5) == pytest.approx(0.0)  # (1+2x1)^2 root
        assert true_tau(0.4) == pytest.approx(0.46656, abs=1e-12)
        # 0.2 * (1.4)^2 * (0.8)^2 = 0.2 * 1.2544
        assert true_tau(0.2) == pytest.approx(0.25088, abs=1e-12)

    def test_x2_profile_matches_effect_factor(self):
        assert model1_x2_mean(0.2) == pytest.approx(1.2544, abs=1e-12)
        x1 = np.linspace(-0.5, 0.5, 11)
        assert np.allclose(true_tau(x1), x1 * model1_x2_mean(x1))

    def test_vectorized_and_scalar_forms(self):
        assert isinstance(true_tau(0.3), float)
        assert true_tau(np.array([0.3])).shape == (1,)


class TestGenerators:
    def test_model1_supports(self):
        s = gen_model1(20_000, substream(41, 1))
        x1 = s.data.X[:, 0]
        resid = s.data.X[:, 1] - model1_x2_mean(x1)
        assert x1.min() >= -0.5 and x1.max() <= 0.5
        assert resid.min() >= -0.5 and resid.max() <= 0.5

    def test_model2_supports(self):
        s = gen_model2(20_000, substream(41, 2))
        x1 = s.data.X[:, 0]
        assert s.data.X.shape == (20_000, 4)
        for j, mean in ((1, 1 + 2 * x1), (2, 1 + 2 * x1), (3, (x1 - 1.0) ** 2)):
            resid = s.data.X[:, j] - mean
            assert resid.min() >= -0.5 and resid.max() <= 0.5

    def test_treatment_frequency_matches_propensity(self):
        for gen, r in ((gen_model1, 3), (gen_model2, 4)):
            s = gen(100_000, substream(41, r))
            p_bar = s.truth.p.mean()
            se = np.sqrt(p_bar * (1 - p_bar) / 100_000)
            assert abs(s.data.D.mean() - p_bar) < 3 * se

    def test_outcomes_consistent_with_arms(self):
        s = gen_model1(5000, substream(41, 5))
        treated = s.data.D == 1
        assert np.array_equal(s.data.Y[treated], s.y1[treated])
        assert np.array_equal(s.data.Y[~treated], s.y0[~treated])
        assert np.all(s.y0 == 0.0)
        assert np.all(s.truth.m0 == 0.0)

    def test_treated_mean_function(self):
        s = gen_model1(5000, substream(41, 6))
        assert np.allclose(s.truth.m1, s.data.X[:, 0] * s.data.X[:, 1])
        s2 = gen_model2(5000, substream(41, 7))
        assert np.allclose(s2.truth.m1, np.prod(s2.data.X, axis=1))

    def test_generation_is_deterministic(self):
        a = gen_model1(1000, substream(42, 9))
        b = gen_model1(1000, substream(42, 9))
        assert np.array_equal(a.data.X, b.data.X)
        assert np.array_equal(a.data.Y, b.data.Y)
        assert np.array_equal(a.data.D, b.data.D)

    def test_dispatch_by_name(self):
        s = generate("model2", 100, substream(41, 8))
        assert s.model == "model2"
        with pytest.raises(ValueError):
            generate("model3", 100, substream(41, 8))

    def test_perturbation_must_keep_propensity_valid(self):
        spec = MisspecificationSpec(c=0.5, a=lambda X: np.ones(X.shape[0]))
        with pytest.raises(ValueError):
            gen_model1(1000, substream(41, 9), spec)

    def test_zero_perturbation_matches_base_model(self):
        spec = MisspecificationSpec(
            c=0.0, d1=0.0, a=lambda X: np.ones(X.shape[0]), b1=lambda X: X[:, 0]
        )
        a = gen_model1(500, substream(41, 10), spec)
        b = gen_model1(500, substream(41, 10))
        assert np.array_equal(a.data.Y, b.data.Y)
        assert np.array_equal(a.truth.p, b.truth.p)


class TestDefaults:
    def test_bandwidth_values(self):
        d1 = default_schedule("model1")
        assert d1.schedule.value("h1", 500) == pytest.approx(0.1 * 500 ** (-1.0 / 9.0))
        assert d1.schedule.value("h1", 500) == pytest.approx(0.050132, abs=5e-7)
        assert d1.schedule.value("h2", 500) == pytest.approx(0.7 * 500 ** (-0.25))
        d2 = default_schedule("model2")
        assert d2.schedule.value("h1", 500) == pytest.approx(0.1 * 500 ** (-1.0 / 13.0))
        assert d2.schedule.value("h3", 500) == pytest.approx(2.5 * 500 ** (-0.125))

    def test_kernel_specs(self):
        d1 = default_schedule("model1")
        assert d1.kernels["K1"].family == "gaussian"
        assert d1.kernels["K1"].order == 4 and d1.kernels["K1"].dim == 1
        assert d1.kernels["K2"].family == "epanechnikov"
        assert d1.kernels["K2"].dim == 2
        assert d1.kernels["K6"].dim == 2 and d1.kernels["K7"].dim == 1
        d2 = default_schedule("model2")
        assert d2.kernels["K1"].order == 6
        assert d2.kernels["K3"].order == 4 and d2.kernels["K3"].dim == 4
        assert d2.kernels["K6"].dim == 4

    def test_schedules_satisfy_rate_conditions(self):
        for model in ("model1", "model2"):
            defaults = default_schedule(model)
            violations = check_rate_conditions(
                defaults.schedule, defaults.orders, d=defaults.d, k=1, scenario="full"
            )
            assert violations == []

    def test_oracle_projections(self):
        d1 = default_schedule("model1")
        assert d1.sdr_propensity.shape == (2, 1)
        assert d1.sdr_outcome1.shape == (2, 2)
        assert d1.sdr_outcome0.shape == (2, 1)
        d2 = default_schedule("model2")
        assert d2.sdr_propensity.shape == (4, 1)

    def test_unknown_model_rejected(self):
        with pytest.raises(ValueError):
            default_schedule("model9")


class TestCombinationConfig:
    def test_oracle_label(self):
        cfg = combination_config("(O,O)", default_schedule("model1"), 500)
        assert cfg.propensity.method == "oracle"
        assert cfg.outcome1.method == "oracle"
        assert cfg.outcome0.method == "oracle"

    def test_parametric_labels(self):
        cfg = combination_config("(mP,cP)", default_schedule("model1"), 500)
        assert cfg.propensity.method == "parametric"
        assert cfg.propensity.features == "intercept+x1"
        assert cfg.outcome1.features == "intercept+all+prod"
        assert cfg.outcome0.features == "intercept"
        cfg2 = combination_config("(cP,mP)", default_schedule("model1"), 500)
        assert cfg2.propensity.features == "intercept+all"
        assert cfg2.outcome1.features == "intercept+all"

    def test_nonparametric_label_binds_bandwidths(self):
        defaults = default_schedule("model1")
        cfg = combination_config("(N,N)", defaults, 500)
        assert cfg.propensity.h == pytest.approx(defaults.schedule.value("h2", 500))
        assert cfg.outcome1.h == pytest.approx(defaults.schedule.value("h3", 500))
        assert cfg.outcome1.kernel.dim == 2

    def test_semiparametric_label_dimensions(self):
        defaults = default_schedule("model2")
        cfg = combination_config("(S,S)", defaults, 500)
        assert cfg.propensity.sdr.target_dim == 1
        assert cfg.propensity.kernel.dim == 1
        assert cfg.outcome1.sdr.target_dim == 4
        assert cfg.outcome1.kernel.dim == 4
        assert cfg.outcome0.sdr.target_dim == 1

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError):
            combination_config("(P,P)", default_schedule("model1"), 500)

    def test_trim_propagates(self):
        cfg = combination_config("(O,O)", default_schedule("model1"), 500, trim=(0.01, 0.99))
        assert cfg.trim == (0.01, 0.99)


class TestValidation:
    def test_dgp_spec(self):
        with pytest.raises(ValueError):
            DgpSpec("model7", 100, 0)
        with pytest.raises(ValueError):
            DgpSpec("model1", 1, 0)
        with pytest.raises(ValueError):
            DgpSpec("model1", 100, -1)
        with pytest.raises(ValueError):
            DgpSpec("model1", 100, 2**64)

    def test_mc_config(self):
        dgp = DgpSpec("model1", 100, 0)
        with pytest.raises(ValueError):
            McConfig(dgp=dgp, combination="(X,Y)")
        with pytest.raises(ValueError):
            McConfig(dgp=dgp, combination="(O,O)", replications=1)
        with pytest.raises(ValueError):
            McConfig(dgp=dgp, combination="(O,O)", grid=())
        with pytest.raises(ValueError):
            McConfig(dgp=dgp, combination="(O,O)", sdr_source="guess")
        with pytest.raises(ValueError):
            McConfig(dgp=dgp, combination="(O,O)", threads=0)


class TestRunMc:
    def test_repeat_run_bit_identical(self):
        cfg = McConfig(dgp=DgpSpec("model1", 300, 77), combination="(cP,cP)", replications=6)
        a = run_mc(cfg)
        b = run_mc(cfg)
        assert np.array_equal(a.tau_hat, b.tau_hat, equal_nan=True)
        assert np.array_equal(a.t_stat, b.t_stat, equal_nan=True)
        assert np.array_equal(a.report.bias, b.report.bias, equal_nan=True)

    def test_thread_count_does_not_change_results(self):
        base = McConfig(dgp=DgpSpec("model1", 300, 78), combination="(O,O)", replications=8)
        a = run_mc(base)
        b = run_mc(
            McConfig(dgp=DgpSpec("model1", 300, 78), combination="(O,O)", replications=8, threads=3)
        )
        assert np.array_equal(a.tau_hat, b.tau_hat, equal_nan=True)

    def test_metrics_recomputable_from_replication_matrix(self):
        cfg = McConfig(dgp=DgpSpec("model1", 400, 79), combination="(O,O)", replications=12)
        res = run_mc(cfg)
        r = res.report
        grid = np.asarray(cfg.grid)
        z95 = ndtri(0.95)
        for g in range(grid.size):
            t = res.t_stat[:, g]
            tau = res.tau_hat[:, g]
            assert r.bias[g] == pytest.approx(np.mean(tau) - true_tau(grid[g]), abs=1e-12)
            sd = np.std(t, ddof=1)
            assert r.sam_sd[g] == pytest.approx(sd, abs=1e-12)
            assert r.mse[g] == pytest.approx(np.mean(t**2), abs=1e-12)
            z = (t - t.mean()) / sd
            assert r.p05[g] == pytest.approx(np.mean(z < -z95), abs=1e-12)
            assert r.p95[g] == pytest.approx(np.mean(z > z95), abs=1e-12)

    def test_statistic_uses_local_scaling(self):
        cfg = McConfig(dgp=DgpSpec("model1", 400, 80), combination="(O,O)", replications=4)
        res = run_mc(cfg)
        scale = np.sqrt(400 * res.report.h1)
        want = scale * (res.tau_hat - true_tau(np.asarray(cfg.grid))[None, :])
        assert np.allclose(res.t_stat, want, equal_nan=True)

    def test_failures_flagged_invalid(self):
        # n=3 cannot support the 3-column logistic design: every
        # replication fails and the run is marked degraded
        cfg = McConfig(dgp=DgpSpec("model1", 3, 81), combination="(cP,cP)", replications=4)
        res = run_mc(cfg)
        assert res.report.failures == 4
        assert not res.report.valid
        assert res.report.first_error is not None
        assert np.all(np.isnan(res.tau_hat))
        assert np.all(np.isnan(res.report.bias))

    def test_opg_control_arm_falls_back(self):
        cfg = McConfig(
            dgp=DgpSpec("model1", 300, 82),
            combination="(S,S)",
            replications=3,
            sdr_source="opg",
        )
        res = run_mc(cfg)
        assert res.report.failures == 0
        # the control arm is constant, so its gradient spectrum is null in
        # every replication and the fixed direction takes over
        assert res.report.diagnostics.get("sdr_outcome0_fallbacks") == 3

    def test_all_combinations_run_clean_at_small_scale(self):
        for i, label in enumerate(COMBINATIONS):
            cfg = McConfig(
                dgp=DgpSpec("model1", 300, 90 + i), combination=label, replications=2
            )
            res = run_mc(cfg)
            assert res.report.failures == 0, label
            assert res.report.valid, label
