import numpy as np
import pytest
from scipy import integrate, stats

from pathfact.dist import (
    GammaParams,
    NormalParams,
    TruncatedNormalParams,
    expected_log_ndtr,
    expected_log_ndtr_grad,
    gamma_expectations,
    log_std_normal_cdf,
    normal_entropy,
    pi_bar_log_prior,
    std_normal_cdf,
    std_normal_quantile,
    trunc_norm_moments,
)


def quadrature_cdf(x):
    # independent oracle: integrate the Gaussian density from 0 to x
    density = lambda t: np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)
    val, _ = integrate.quad(density, 0.0, x)
    return 0.5 + val


class TestStdNormalCdf:
    def test_symmetry_at_zero(self):
        assert std_normal_cdf(0.0) == 0.5

    def test_against_quadrature(self):
        assert std_normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
        assert std_normal_cdf(1.959964) == pytest.approx(quadrature_cdf(1.959964), abs=1e-12)

    def test_deep_tail(self):
        # The exact value at -40 sits below the smallest subnormal double, so
        # the unlogged cdf underflows; the tail bound is asserted in log space.
        assert 0.0 < std_normal_cdf(-37.5) <= 1e-300
        assert std_normal_cdf(-40.0) <= 1e-300
        log_tail = log_std_normal_cdf(-40.0)
        assert np.isfinite(log_tail) and log_tail < np.log(1e-300)

    def test_reflection(self):
        x = np.linspace(-8, 8, 101)
        np.testing.assert_allclose(std_normal_cdf(x) + std_normal_cdf(-x), 1.0, atol=1e-14)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            std_normal_cdf(np.nan)
        with pytest.raises(ValueError):
            std_normal_cdf(np.inf)


class TestStdNormalQuantile:
    def test_median(self):
        assert std_normal_quantile(0.5) == 0.0

    def test_against_inverted_quadrature(self):
        from scipy.optimize import brentq

        target = brentq(lambda x: quadrature_cdf(x) - 0.975, 0.0, 10.0, xtol=1e-12)
        assert std_normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-5)
        assert std_normal_quantile(0.975) == pytest.approx(target, abs=1e-9)

    def test_tiny_probability_round_trip(self):
        q = std_normal_quantile(1e-12)
        assert q < 0
        assert std_normal_cdf(q) == pytest.approx(1e-12, rel=1e-14)

    def test_round_trip_grid(self):
        p = np.concatenate([[1e-10], np.linspace(1e-6, 1 - 1e-6, 41), [1 - 1e-10]])
        np.testing.assert_allclose(std_normal_cdf(std_normal_quantile(p)), p, rtol=1e-9)

    def test_domain(self):
        for bad in (0.0, 1.0, -0.1, 1.1):
            with pytest.raises(ValueError):
                std_normal_quantile(bad)


class TestTruncNormMoments:
    def test_standard_case_closed_form(self):
        mean, var, _ = trunc_norm_moments(0.0, 1.0)
        assert mean == pytest.approx(np.sqrt(2.0 / np.pi), abs=1e-9)
        assert var == pytest.approx(1.0 - 2.0 / np.pi, abs=1e-9)

    def test_standard_case_monte_carlo(self):
        rng = np.random.default_rng(7)
        draws = np.abs(rng.standard_normal(10_000_000))
        mean, var, _ = trunc_norm_moments(0.0, 1.0)
        se = draws.std() / np.sqrt(draws.size)
        assert abs(mean - draws.mean()) < 3 * se

    def test_negligible_truncation(self):
        mean, var, _ = trunc_norm_moments(10.0, 1.0)
        assert mean == pytest.approx(10.0, abs=1e-8)
        assert var == pytest.approx(1.0, abs=1e-8)

    def test_deep_truncation_matches_asymptotics(self):
        mean, var, _ = trunc_norm_moments(-30.0, 1.0)
        t = 30.0
        series = 1.0 / t - 2.0 / t**3 + 10.0 / t**5  # tail expansion of the mean
        assert 0.0 < mean < 0.04
        assert mean == pytest.approx(series, rel=1e-6)
        assert np.isfinite(var) and var > 0

    def test_monotone_and_finite_to_minus_38(self):
        locations = np.linspace(-38.0, 5.0, 300)
        mean, var, entropy = trunc_norm_moments(locations, 1.0)
        assert np.all(np.isfinite(mean))
        assert np.all(np.isfinite(var))
        assert np.all(np.isfinite(entropy))
        assert np.all(mean > 0)
        assert np.all(np.diff(mean) > 0)  # decreasing toward 0 as location -> -inf
        assert np.all(var <= 1.0 + 1e-12)

    def test_variance_in_bounds_random(self):
        rng = np.random.default_rng(11)
        loc = rng.uniform(-20, 20, size=200)
        scale = rng.uniform(0.01, 9.0, size=200)
        _, var, _ = trunc_norm_moments(loc, scale)
        assert np.all(var > 0)
        assert np.all(var <= scale * (1 + 1e-12))

    def test_rejects_bad_scale(self):
        with pytest.raises(ValueError):
            trunc_norm_moments(0.0, 0.0)
        with pytest.raises(ValueError):
            TruncatedNormalParams(location=0.0, scale_sq=-1.0)


class TestGammaExpectations:
    def test_exponential_case(self):
        mean, _, _ = gamma_expectations(GammaParams(1.0, 1.0))
        assert mean == 1.0

    def test_mean_is_shape_over_rate(self):
        mean, _, _ = gamma_expectations(GammaParams(2.0, 4.0))
        assert mean == 0.5

    def test_mean_log_against_quadrature_and_monte_carlo(self):
        params = GammaParams(3.5, 2.0)
        _, mean_log, _ = gamma_expectations(params)
        pdf = stats.gamma(a=3.5, scale=0.5).pdf
        oracle, _ = integrate.quad(lambda x: np.log(x) * pdf(x), 0, np.inf)
        assert mean_log == pytest.approx(oracle, abs=1e-6)
        rng = np.random.default_rng(3)
        draws = np.log(rng.gamma(3.5, 0.5, size=10_000_000))
        se = draws.std() / np.sqrt(draws.size)
        assert abs(mean_log - draws.mean()) < 3 * se


class TestEntropies:
    def test_gamma_entropy_monte_carlo(self):
        params = GammaParams(2.5, 3.0)
        _, _, entropy = gamma_expectations(params)
        rng = np.random.default_rng(5)
        draws = rng.gamma(2.5, 1 / 3.0, size=1_000_000)
        logq = stats.gamma(a=2.5, scale=1 / 3.0).logpdf(draws)
        se = logq.std() / np.sqrt(logq.size)
        assert abs(entropy - (-logq.mean())) < 3 * se

    def test_trunc_norm_entropy_monte_carlo(self):
        loc, scale_sq = 0.7, 2.0
        sd = np.sqrt(scale_sq)
        _, _, entropy = trunc_norm_moments(loc, scale_sq)
        dist = stats.truncnorm(
            a=(0.0 - loc) / sd, b=np.inf, loc=loc, scale=sd
        )
        oracle, _ = integrate.quad(lambda s: -dist.pdf(s) * dist.logpdf(s), 0, np.inf)
        assert entropy == pytest.approx(oracle, abs=1e-9)
        rng = np.random.default_rng(9)
        draws = dist.rvs(size=1_000_000, random_state=rng)
        logq = dist.logpdf(draws)
        se = logq.std() / np.sqrt(logq.size)
        assert abs(entropy - (-logq.mean())) < 3 * se

    def test_normal_entropy_monte_carlo(self):
        variance = 0.3
        entropy = normal_entropy(variance)
        rng = np.random.default_rng(13)
        draws = rng.normal(0.0, np.sqrt(variance), size=1_000_000)
        logq = stats.norm(0.0, np.sqrt(variance)).logpdf(draws)
        se = logq.std() / np.sqrt(logq.size)
        assert abs(entropy - (-logq.mean())) < 3 * se


class TestPiBarLogPrior:
    def test_uniform_beta_leaves_gaussian(self):
        # beta_a / n_sets = 1 makes the Beta factor uniform
        val = pi_bar_log_prior(0.0, beta_a=8.0, n_sets=8)
        assert val == pytest.approx(-0.9189385332046727, abs=1e-9)

    def test_direct_substitution(self):
        val = pi_bar_log_prior(0.0, beta_a=16.0, n_sets=8)
        expected = -0.9189385332046727 + np.log(2.0) + np.log(0.5)
        assert val == pytest.approx(expected, abs=1e-9)

    def test_far_tail_against_log_quadrature(self):
        a = 0.1
        tail_mass, _ = integrate.quad(
            lambda u: np.exp(-0.5 * (8.0 + u) ** 2) / np.sqrt(2 * np.pi), 0, np.inf
        )
        oracle = (a - 1.0) * np.log(tail_mass) + np.log(a) + stats.norm.logpdf(-8.0)
        val = pi_bar_log_prior(-8.0, beta_a=a * 10, n_sets=10)
        assert np.isfinite(val)
        assert val == pytest.approx(oracle, abs=1e-6)

    def test_finite_deep_into_tail(self):
        assert np.isfinite(pi_bar_log_prior(-38.0, beta_a=0.5, n_sets=10))

    @pytest.mark.parametrize("a", [0.05, 0.5, 1.0, 2.0])
    def test_normalizes(self, a):
        total, _ = integrate.quad(
            lambda t: np.exp(pi_bar_log_prior(t, beta_a=a * 10, n_sets=10)),
            -np.inf,
            np.inf,
            limit=200,
        )
        assert total == pytest.approx(1.0, abs=1e-6)


class TestExpectedLogNdtr:
    def test_against_quadrature(self):
        from scipy.special import log_ndtr

        for mu, var in [(0.0, 1.0), (-2.0, 0.5), (1.5, 3.0), (-6.0, 0.2)]:
            oracle, _ = integrate.quad(
                lambda z: log_ndtr(mu + np.sqrt(var) * z) * stats.norm.pdf(z), -12, 12
            )
            assert expected_log_ndtr(np.array([mu]), np.array([var]))[0] == pytest.approx(
                oracle, rel=1e-8, abs=1e-10
            )

    def test_gradient_matches_finite_differences(self):
        mu = np.array([0.3, -1.2, 2.0])
        var = np.array([0.7, 1.5, 0.2])
        d_mu, d_var = expected_log_ndtr_grad(mu, var)
        eps = 1e-6
        fd_mu = (expected_log_ndtr(mu + eps, var) - expected_log_ndtr(mu - eps, var)) / (2 * eps)
        fd_var = (expected_log_ndtr(mu, var + eps) - expected_log_ndtr(mu, var - eps)) / (2 * eps)
        np.testing.assert_allclose(d_mu, fd_mu, rtol=1e-6)
        np.testing.assert_allclose(d_var, fd_var, rtol=1e-6)


class TestParamValidation:
    def test_gamma_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            GammaParams(0.0, 1.0)
        with pytest.raises(ValueError):
            GammaParams(1.0, -2.0)

    def test_normal_rejects_nonpositive_variance(self):
        with pytest.raises(ValueError):
            NormalParams(0.0, 0.0)
