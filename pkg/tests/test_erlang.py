"""Unit tests for Erlang and Erlang-mixture distribution helpers."""

import math

import numpy as np
import pytest
from scipy import integrate

from erlang_reward_checker.errors import MixtureError
from erlang_reward_checker.models import ErlangMixture
from erlang_reward_checker.services.erlang import (
    entropy_with_gradient,
    erlang_cdf,
    erlang_pdf,
    erlang_sf,
    grid_erlang_mixture,
    mixture_cdf,
    mixture_entropy,
    mixture_logpdf,
    mixture_moments,
    mixture_pdf,
    mixture_quantile,
    mixture_sf,
    sample_mixture,
)

THREE = ErlangMixture(weights=(0.2, 0.5, 0.3), shapes=(3, 9, 27), rate=2.0)


class TestErlang:
    def test_cdf_closed_form(self):
        assert erlang_cdf(2.0, 2, 1.0) == pytest.approx(1.0 - 3.0 * math.exp(-2.0), abs=1e-12)

    def test_sf_complements_cdf(self):
        x = np.array([0.1, 1.0, 5.0])
        assert erlang_cdf(x, 4, 1.5) + erlang_sf(x, 4, 1.5) == pytest.approx(np.ones(3))

    def test_pdf_at_origin(self):
        assert erlang_pdf(0.0, 1, 2.5) == pytest.approx(2.5)
        assert erlang_pdf(0.0, 2, 2.5) == 0.0
        assert erlang_pdf(-1.0, 1, 2.5) == 0.0

    def test_pdf_matches_formula(self):
        x, a, lam = 1.7, 3, 0.8
        expected = lam**a * x ** (a - 1) * math.exp(-lam * x) / math.factorial(a - 1)
        assert erlang_pdf(x, a, lam) == pytest.approx(expected, rel=1e-12)

    def test_large_shape_stays_finite(self):
        value = erlang_pdf(20000.0, 20000, 1.0)
        assert math.isfinite(value)
        assert value > 0.0

    @pytest.mark.parametrize("shape", [1.5, 0, -2])
    def test_invalid_shape(self, shape):
        with pytest.raises(MixtureError):
            erlang_pdf(1.0, shape, 1.0)

    def test_invalid_rate(self):
        with pytest.raises(MixtureError):
            erlang_cdf(1.0, 2, 0.0)


class TestMixture:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(MixtureError, match="sum to 1"):
            ErlangMixture(weights=(0.5, 0.4), shapes=(1, 2), rate=1.0)

    def test_negative_location_rejected(self):
        with pytest.raises(MixtureError):
            ErlangMixture(weights=(1.0,), shapes=(1,), rate=1.0, location=-1.0)

    def test_cdf_zero_at_location(self):
        m = ErlangMixture(weights=(1.0,), shapes=(2,), rate=1.0, location=1.5)
        assert mixture_cdf(m, 1.5) == 0.0
        assert mixture_cdf(m, 0.3) == 0.0
        assert mixture_pdf(m, 1.0) == 0.0

    def test_logpdf_matches_pdf(self):
        x = np.array([0.5, 2.0, 10.0])
        assert np.exp(mixture_logpdf(THREE, x)) == pytest.approx(mixture_pdf(THREE, x), rel=1e-12)

    def test_cdf_and_sf(self):
        x = np.linspace(0.0, 40.0, 9)
        assert mixture_cdf(THREE, x) + mixture_sf(THREE, x) == pytest.approx(np.ones(9))

    def test_pdf_integrates_to_one(self):
        total, _ = integrate.quad(lambda x: mixture_pdf(THREE, x), 0.0, 60.0, points=[1.0, 4.0, 13.0], limit=200)
        assert total == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_moments_match_quadrature(self, k):
        m = ErlangMixture(weights=(0.2, 0.5, 0.3), shapes=(3, 27, 81), rate=2.0)
        upper = mixture_quantile(m, 1.0 - 1e-14)
        numeric, _ = integrate.quad(
            lambda x: x**k * mixture_pdf(m, x), 0.0, upper, points=[1.0, 13.0, 40.0], limit=500
        )
        unshifted, _ = mixture_moments(m, k)
        assert unshifted[k - 1] == pytest.approx(numeric, rel=1e-6)

    def test_shifted_moments(self):
        m = ErlangMixture(weights=(1.0,), shapes=(1,), rate=1.0, location=1.5)
        unshifted, shifted = mixture_moments(m, 2)
        assert unshifted == pytest.approx((1.0, 2.0))
        assert shifted == pytest.approx((2.5, 7.25))

    @pytest.mark.parametrize("rate", [0.5, 1.0, 3.0])
    def test_exponential_entropy(self, rate):
        m = ErlangMixture(weights=(1.0,), shapes=(1,), rate=rate)
        assert mixture_entropy(m) == pytest.approx(1.0 - math.log(rate), abs=1e-6)

    def test_entropy_ignores_location(self):
        shifted = ErlangMixture(weights=(0.4, 0.6), shapes=(2, 6), rate=1.0, location=3.0)
        plain = ErlangMixture(weights=(0.4, 0.6), shapes=(2, 6), rate=1.0)
        assert mixture_entropy(shifted) == pytest.approx(mixture_entropy(plain), abs=1e-9)

    def test_entropy_gradient_log_rate(self):
        estimate = entropy_with_gradient(ErlangMixture(weights=(1.0,), shapes=(1,), rate=2.0))
        assert estimate.grad_log_rate == pytest.approx(-1.0, abs=1e-5)

    def test_entropy_gradient_weights(self):
        base = (0.3, 0.7)
        h = 1e-4
        estimate = entropy_with_gradient(ErlangMixture(weights=base, shapes=(1, 4), rate=1.5))
        up = mixture_entropy(ErlangMixture(weights=(0.3 + h, 0.7 - h), shapes=(1, 4), rate=1.5))
        down = mixture_entropy(ErlangMixture(weights=(0.3 - h, 0.7 + h), shapes=(1, 4), rate=1.5))
        directional = estimate.grad_weights[0] - estimate.grad_weights[1]
        assert directional == pytest.approx((up - down) / (2 * h), abs=1e-4)

    @pytest.mark.parametrize("p", [0.01, 0.5, 0.9, 0.999])
    def test_quantile_inverts_cdf(self, p):
        assert mixture_cdf(THREE, mixture_quantile(THREE, p)) == pytest.approx(p, abs=1e-10)

    @pytest.mark.parametrize("x", [0.5, 2.0, 10.0])
    def test_cdf_inverts_quantile(self, x):
        assert mixture_quantile(THREE, mixture_cdf(THREE, x)) == pytest.approx(x, abs=1e-8)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1])
    def test_quantile_range(self, p):
        with pytest.raises(MixtureError):
            mixture_quantile(THREE, p)

    def test_sample_mean(self):
        rng = np.random.default_rng(3)
        samples = sample_mixture(THREE, 100_000, rng)
        (mean, second), _ = mixture_moments(THREE, 2)
        sd = math.sqrt(second - mean**2)
        assert abs(samples.mean() - mean) < 5 * sd / math.sqrt(samples.size)
        assert samples.min() >= 0.0


class TestGridMixture:
    @staticmethod
    def _distance(beta: float, j_max: int) -> float:
        grid = grid_erlang_mixture(lambda x: 1.0 - math.exp(-x), beta, j_max)
        xs = np.linspace(0.0, 30.0, 30001)
        return float(np.max(np.abs(mixture_cdf(grid.mixture, xs) - (1.0 - np.exp(-xs)))))

    def test_structure(self):
        grid = grid_erlang_mixture(lambda x: 1.0 - math.exp(-x), 0.5, 60)
        m = grid.mixture
        assert m.rate == pytest.approx(2.0)
        assert m.shapes == tuple(range(1, 61))
        assert sum(m.weights) == pytest.approx(1.0)
        assert grid.truncated_mass == pytest.approx(math.exp(-30.0), abs=1e-12)

    def test_distance_shrinks_with_beta(self):
        distances = [self._distance(1.0, 30), self._distance(0.5, 60), self._distance(0.1, 150)]
        assert distances[0] > distances[1] > distances[2]
        assert distances[2] < 0.05

    def test_j_max_too_small(self):
        with pytest.raises(MixtureError, match="too small"):
            grid_erlang_mixture(lambda x: 1.0 - math.exp(-x), 1.0, 3)
