"""数据生成过程与蒙特卡洛实验的测试

标记为 slow 的测试需要数千次重复。
"""
import numpy as np
import pytest
from scipy import stats

from config import RunConfig
from errors import ConfigError, ExperimentAborted, InputError
from joint_tests import run_joint_diagnostics
from simulation import (DEFAULT_LAMBDA, DgpConfig, ExperimentSettings, density_jump,
                        empirical_size, lambda_eval, p_manip_for_density_jump, power_curve,
                        power_table, replication_seed, run_experiment, simulate_sample,
                        size_adjusted_power, size_adjusted_power_from_results, size_table)

FAST = dict(mc_draws=10000)


class TestLambda:

    def test_zero_at_cutoff(self):
        assert lambda_eval(DEFAULT_LAMBDA, 0.0) == 0.0
        assert lambda_eval((3.0, -1.0), 0.0) == 0.0

    def test_identity(self):
        assert lambda_eval((1.0,), 0.5) == 0.5

    def test_default_coefficients(self):
        x = 0.1
        expected = sum(c * x ** (k + 1) for k, c in enumerate(DEFAULT_LAMBDA))
        assert lambda_eval(DEFAULT_LAMBDA, x) == pytest.approx(expected, rel=1e-12)

    def test_vectorized(self):
        x = np.array([-0.2, 0.0, 0.3])
        np.testing.assert_allclose(lambda_eval((2.0, 1.0), x), 2.0 * x + x ** 2)


class TestDensityJump:

    def test_null_has_no_jump(self):
        assert density_jump(0.5) == 0.0

    def test_inverse(self):
        p = p_manip_for_density_jump(0.15)
        assert density_jump(p) == pytest.approx(0.15, rel=1e-12)
        assert 0.48 < p < 0.5

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            p_manip_for_density_jump(-0.1)
        with pytest.raises(ConfigError):
            p_manip_for_density_jump(100.0)

    def test_matches_simulated_boundary_mass(self):
        sigma = 0.12
        c0 = stats.truncnorm.pdf(0.0, 0.0, 1.0 / sigma, scale=sigma)
        assert density_jump(0.3, sigma) == pytest.approx(0.4 * c0, rel=1e-10)


class TestSimulateSample:

    def test_symmetric_assignment(self):
        sample = simulate_sample(DgpConfig(n=100000, d=1, seed=1))
        share = np.mean(sample.x >= 0)
        assert abs(share - 0.5) < 4 * np.sqrt(0.25 / 100000)

    def test_manipulation_mass(self):
        sample = simulate_sample(DgpConfig(n=100000, d=0, p_manip=0.3, seed=2))
        assert np.mean(sample.x >= 0) == pytest.approx(0.7, abs=0.01)

    def test_support(self):
        sample = simulate_sample(DgpConfig(n=5000, d=0, seed=3))
        assert np.all(np.abs(sample.x) <= 1.0)

    def test_noise_correlation(self):
        cfg = DgpConfig(n=100000, d=3, rho=0.9, seed=4)
        sample = simulate_sample(cfg)
        noise = sample.z - lambda_eval(cfg.lambda_coeffs, sample.x)[:, None]
        corr = np.corrcoef(noise, rowvar=False)
        assert np.all(np.abs(corr[np.triu_indices(3, 1)] - 0.9) < 0.02)

    def test_jump_only_on_last_covariate(self):
        cfg = DgpConfig(n=50000, d=2, a=2.0, seed=5)
        sample = simulate_sample(cfg)
        noise = sample.z - lambda_eval(cfg.lambda_coeffs, sample.x)[:, None]
        right = sample.x >= 0
        assert noise[right, 1].mean() - noise[~right, 1].mean() == pytest.approx(2.0, abs=0.05)
        assert noise[right, 0].mean() - noise[~right, 0].mean() == pytest.approx(0.0, abs=0.05)

    def test_deterministic(self):
        cfg = DgpConfig(n=300, d=2, seed=6)
        a, b = simulate_sample(cfg), simulate_sample(cfg)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.z, b.z)

    def test_null_flag(self):
        assert DgpConfig(n=10, d=1).is_null
        assert not DgpConfig(n=10, d=1, a=0.5).is_null

    @pytest.mark.parametrize("field, value", [("rho", 1.0), ("p_manip", 0.6), ("a", -1.0),
                                              ("n", 1), ("sigma_x", 0.0)])
    def test_invalid(self, field, value):
        values = dict(n=100, d=1)
        values[field] = value
        with pytest.raises(ConfigError) as info:
            DgpConfig(**values)
        assert info.value.field == field

    def test_jump_requires_covariates(self):
        with pytest.raises(ConfigError) as info:
            DgpConfig(n=100, d=0, a=1.0)
        assert info.value.field == "a"


class TestExperiment:

    def test_seeds_are_keyed(self):
        assert replication_seed(1, 0) == replication_seed(1, 0)
        assert replication_seed(1, 0) != replication_seed(1, 1)
        assert replication_seed(1, 0) != replication_seed(2, 0)

    def test_small_size_run(self):
        result = empirical_size(DgpConfig(n=500, d=1, seed=7),
                                ExperimentSettings(replications=20, **FAST))
        for name, rate in result.rates.items():
            assert 0.0 <= rate <= 1.0
            assert result.rejections[name] == round(rate * result.decisions[name])
        assert result.failures == 0
        assert len(result.outcomes) == 20
        assert len(result.mean_tau) == 2

    def test_alpha_one_always_rejects(self):
        # Bonferroni 的单项水平为 1/(d+1)，α = 1 时并非总是拒绝，单独测试
        result = empirical_size(DgpConfig(n=500, d=1, seed=8),
                                ExperimentSettings(replications=10, alpha=1.0,
                                                   procedures=("wald", "max", "max_studentized",
                                                               "naive"), **FAST))
        assert all(rate == 1.0 for rate in result.rates.values())

    def test_identical_for_any_worker_count(self):
        cfg = DgpConfig(n=400, d=2, seed=9)
        one = run_experiment(cfg, ExperimentSettings(replications=6, workers=1, **FAST))
        two = run_experiment(cfg, ExperimentSettings(replications=6, workers=2, **FAST))
        assert one.rates == two.rates
        assert one.mean_tau == two.mean_tau
        assert [o.statistics for o in one.outcomes] == [o.statistics for o in two.outcomes]

    def test_requires_null(self):
        with pytest.raises(ConfigError):
            empirical_size(DgpConfig(n=500, d=1, a=1.0), ExperimentSettings(replications=2))

    def test_aborts_when_estimation_fails(self):
        # 带宽过小，每次重复都奇异
        settings = ExperimentSettings(replications=5, bandwidths=(1e-6,), h_f=1e-6, **FAST)
        with pytest.raises(ExperimentAborted):
            empirical_size(DgpConfig(n=200, d=1, seed=10), settings)

    def test_power_curve_uses_density_jump(self):
        results = power_curve(DgpConfig(n=400, d=1, seed=11), [0.0, 1.0],
                              ExperimentSettings(replications=4, **FAST), tau_f=0.15)
        assert [r.config.a for r in results] == [0.0, 1.0]
        assert density_jump(results[0].config.p_manip) == pytest.approx(0.15)

    def test_power_curve_without_covariates(self):
        with pytest.raises(ConfigError):
            power_curve(DgpConfig(n=400, d=0, seed=11), [0.0, 1.0],
                        ExperimentSettings(replications=2, **FAST))

    def test_power_table_columns(self):
        settings = ExperimentSettings(replications=4, procedures=("wald", "max"), **FAST)
        null = empirical_size(DgpConfig(n=400, d=1, seed=12), settings)
        results = power_curve(DgpConfig(n=400, d=1, seed=13), [0.5], settings, tau_f=0.15)
        frame = power_table(null, results)
        assert list(frame.columns) == ["a", "p_manip", "tau_f", "wald", "wald_se", "wald_adj",
                                       "max", "max_se", "max_adj"]

    def test_size_table_layout(self):
        settings = ExperimentSettings(replications=3, **FAST)
        frame = size_table(DgpConfig(n=300, d=1, seed=14), settings, dims=[1, 2], ns=[300])
        assert list(frame.columns) == ["dim", "n", "naive", "bonfe", "chisq", "max", "max_inv"]
        assert frame["dim"].tolist() == [1, 2]


class TestSizeAdjustedPower:

    def test_self_adjustment(self):
        rng = np.random.default_rng(15)
        null = {"wald": rng.chisquare(3, 1000)}
        result = size_adjusted_power(null, null, alpha=0.05)
        assert result.rates["wald"] == pytest.approx(0.05, abs=1 / 1000)

    def test_shifted_alternative_has_power(self):
        rng = np.random.default_rng(16)
        null = {"max": rng.chisquare(1, 1000)}
        alt = {"max": rng.chisquare(1, 1000) + 10.0}
        assert size_adjusted_power(null, alt).rates["max"] > 0.9

    def test_degenerate_ties_flagged(self):
        result = size_adjusted_power({"naive": np.ones(50)}, {"naive": np.ones(50)})
        assert result.degenerate == ("naive",)
        assert result.rates["naive"] == 0.0

    def test_requires_statistics(self):
        with pytest.raises(InputError):
            size_adjusted_power({}, {"wald": [1.0, 2.0]})

    def test_requires_retained_replications(self):
        settings = ExperimentSettings(replications=2, keep_replications=False, **FAST)
        result = empirical_size(DgpConfig(n=300, d=1, seed=17), settings)
        with pytest.raises(InputError):
            size_adjusted_power_from_results(result, result)


@pytest.mark.slow
class TestCalibration:
    """原假设下的校准性质与经验检验水平的参考值"""

    def test_null_tau_centered(self):
        result = empirical_size(DgpConfig(n=1000, d=2, seed=100),
                                ExperimentSettings(replications=2000, procedures=("naive",),
                                                   workers=4))
        for mean, se in zip(result.mean_tau, result.tau_mc_se):
            assert abs(mean) < 3 * se

    def test_studentized_components_normal(self):
        n, d = 1000, 1
        config = RunConfig(seed=0, procedures=("naive",))
        scaled = []
        for seed in range(2000):
            sample = simulate_sample(DgpConfig(n=n, d=d, seed=seed))
            vector = run_joint_diagnostics(sample, config).statistic_vector
            scaled.append(np.asarray(vector["t"]) / np.sqrt(np.diag(vector["v"])))
        scaled = np.array(scaled)
        assert scaled.shape == (2000, d + 1)
        for k in range(d + 1):
            assert stats.kstest(scaled[:, k], stats.norm.cdf).statistic < 0.05

    @pytest.mark.parametrize("d", [1, 3])
    def test_wald_matches_chi_square(self, d):
        result = empirical_size(DgpConfig(n=1000, d=d, seed=101 + d),
                                ExperimentSettings(replications=2000, procedures=("wald",),
                                                   workers=4))
        wald = result.statistics("wald")
        assert stats.kstest(wald, stats.chi2(d + 1).cdf).statistic < 0.05

    @pytest.mark.parametrize("d, naive, bonfe, chisq, mx", [
        (1, 0.081, 0.035, 0.039, 0.048),
        (3, 0.173, None, 0.054, None),
        (5, 0.271, 0.052, None, 0.057),
    ])
    def test_size_table_rho0(self, d, naive, bonfe, chisq, mx):
        result = empirical_size(DgpConfig(n=1000, d=d, seed=200 + d),
                                ExperimentSettings(replications=3000, workers=8))
        expected = {"naive": naive, "bonferroni": bonfe, "wald": chisq, "max": mx}
        for name, rate in expected.items():
            if rate is not None:
                assert result.rates[name] == pytest.approx(rate, abs=0.03), name

    def test_naive_distortion_grows_with_dimension(self):
        settings = ExperimentSettings(replications=1000, procedures=("naive", "wald"), workers=8)
        results = [empirical_size(DgpConfig(n=500, d=d, seed=250 + d), settings)
                   for d in (1, 3, 5, 10)]
        for low, high in zip(results, results[1:]):
            se = np.hypot(low.rate_se("naive"), high.rate_se("naive"))
            assert high.rates["naive"] - low.rates["naive"] > 2 * se
        assert results[-1].rates["wald"] > 0.15

    def test_correlated_covariates(self):
        result = empirical_size(DgpConfig(n=1000, d=5, rho=0.9, seed=260),
                                ExperimentSettings(replications=3000,
                                                   procedures=("bonferroni", "max"), workers=8))
        assert result.rates["bonferroni"] <= 0.04
        assert result.rates["max"] == pytest.approx(0.054, abs=0.03)

    def test_wald_distortion_grows_with_dimension(self):
        settings = ExperimentSettings(replications=1000, procedures=("wald",), workers=8)
        result = empirical_size(DgpConfig(n=500, d=25, seed=300), settings)
        assert result.rates["wald"] > 0.5

    def test_power_ordering(self):
        settings = ExperimentSettings(replications=1000, workers=8)
        base = DgpConfig(n=1000, d=5, seed=400)
        null = empirical_size(base, settings)
        results = power_curve(base, [0.5, 1.0, 1.5, 2.0], settings, tau_f=0.15)
        for result in results:
            se = np.hypot(result.rate_se("max"), result.rate_se("bonferroni"))
            assert result.rates["max"] >= result.rates["bonferroni"] - 2 * se
            if result.config.a >= 1.0:
                adjusted = size_adjusted_power_from_results(null, result)
                se = np.sqrt(2 * 0.25 / result.replications)
                assert adjusted.rates["wald"] >= adjusted.rates["max"] - 2 * se
