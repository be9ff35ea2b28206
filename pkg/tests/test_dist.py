import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdmeta import dist
from mdmeta.errors import DomainError, NumericError, ParameterError

mp.mp.dps = 40


# independent high-precision CDFs
def mp_norm(x):
    return float(mp.ncdf(x))


def mp_chi2(x, k):
    return float(mp.gammainc(mp.mpf(k) / 2, 0, mp.mpf(x) / 2, regularized=True))


def mp_t(x, nu):
    nu, x = mp.mpf(nu), mp.mpf(x)
    tail = mp.betainc(nu / 2, mp.mpf(1) / 2, 0, nu / (nu + x * x), regularized=True) / 2
    return float(1 - tail if x >= 0 else tail)


def mp_f(x, d1, d2):
    d1, d2, x = mp.mpf(d1), mp.mpf(d2), mp.mpf(x)
    return float(mp.betainc(d1 / 2, d2 / 2, 0, d1 * x / (d1 * x + d2), regularized=True))


class TestCdf:
    def test_examples(self):
        assert dist.cdf(dist.Normal(0, 1), 0.0) == 0.5
        assert dist.cdf(dist.ChiSquare(2), 2.0) == pytest.approx(1 - math.exp(-1), abs=1e-15)
        assert dist.cdf(dist.Normal(0, 1), 1.96) == pytest.approx(0.9750021048517795, abs=1e-12)

    @pytest.mark.parametrize("x", [-8.0, -3.3, -0.2, 0.7, 2.5, 8.0])
    def test_normal_matches_mpmath(self, x):
        assert abs(dist.cdf(dist.Normal(0, 1), x) - mp_norm(x)) <= 1e-10

    @pytest.mark.parametrize("k", [0.5, 1.0, 3.7, 29.0, 250.0])
    def test_chi2_matches_mpmath(self, k):
        sd = math.sqrt(2 * k)
        for z in (-0.9, 0.0, 1.5, 4.0, 8.0):
            x = max(k + z * sd, 1e-3)
            assert abs(dist.cdf(dist.ChiSquare(k), x) - mp_chi2(x, k)) <= 1e-10

    @pytest.mark.parametrize("nu", [1.0, 2.5, 4.0, 30.0, 1e4])
    def test_t_matches_mpmath(self, nu):
        for x in (-8.0, -2.0, -0.1, 0.0, 0.4, 3.0, 8.0):
            assert abs(dist.cdf(dist.StudentT(nu), x) - mp_t(x, nu)) <= 1e-10

    @pytest.mark.parametrize("d1,d2", [(1, 1), (4, 17.5), (29, 6.2), (2, 1e5), (9, 1e8), (1, 1e12)])
    def test_f_matches_mpmath(self, d1, d2):
        for x in (0.01, 0.3, 1.0, 2.2, 5.0):
            assert abs(dist.cdf(dist.FisherF(d1, d2), x) - mp_f(x, d1, d2)) <= 1e-10

    def test_f_infinite_d2_is_scaled_chi2(self):
        for x in (0.2, 1.0, 3.0):
            assert dist.cdf(dist.FisherF(4, math.inf), x) == pytest.approx(mp_chi2(4 * x, 4), abs=1e-12)

    def test_limits_and_monotone(self):
        for s in (dist.Normal(1, 3), dist.StudentT(3), dist.ChiSquare(2), dist.FisherF(3, 7)):
            assert dist.cdf(s, -math.inf) == 0.0
            assert dist.cdf(s, math.inf) == 1.0
            x = np.linspace(-5, 20, 500)
            assert np.all(np.diff(dist.cdf(s, x)) >= 0)

    @given(st.floats(0.1, 60), st.floats(0.1, 60), st.floats(1e-3, 50))
    @settings(max_examples=200, deadline=None)
    def test_f_reciprocal_symmetry(self, d1, d2, x):
        a = dist.cdf(dist.FisherF(d1, d2), x)
        b = dist.cdf(dist.FisherF(d2, d1), 1 / x)
        assert a == pytest.approx(1 - b, abs=1e-12)

    @pytest.mark.parametrize("bad", [lambda: dist.Normal(0, 0), lambda: dist.StudentT(-1),
                                     lambda: dist.ChiSquare(0), lambda: dist.FisherF(1, 0),
                                     lambda: dist.Normal(math.nan, 1)])
    def test_invalid_parameters(self, bad):
        with pytest.raises(ParameterError):
            bad()


class TestQuantile:
    def test_examples(self):
        assert dist.quantile(dist.Normal(0, 1), 0.5) == 0.0
        assert dist.quantile(dist.FisherF(1, 1e12), 0.95) == pytest.approx(3.841458820694124, abs=1e-9)
        assert dist.quantile(dist.StudentT(4), 0.975) == pytest.approx(2.7764451051977987, abs=1e-9)

    @pytest.mark.parametrize("spec", [dist.Normal(-2, 0.5), dist.StudentT(0.8), dist.StudentT(4),
                                      dist.ChiSquare(0.3), dist.ChiSquare(17.2), dist.FisherF(1, 1),
                                      dist.FisherF(4, 17.5), dist.FisherF(29, 4.5), dist.FisherF(2, 3e6),
                                      dist.FisherF(9, 7e9), dist.FisherF(5, math.inf)])
    def test_round_trip(self, spec):
        p = np.linspace(0.01, 0.99, 99)
        x = dist.quantile(spec, p)
        assert np.max(np.abs(dist.cdf(spec, x) - p)) <= 1e-9
        assert np.all(np.diff(x) > 0)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, math.nan])
    def test_domain(self, p):
        with pytest.raises(DomainError):
            dist.quantile(dist.Normal(), p)

    @given(st.floats(0.2, 80), st.floats(4.01, 1e9), st.floats(0.001, 0.999))
    @settings(max_examples=150, deadline=None)
    def test_f_round_trip_property(self, d1, d2, p):
        x = dist.quantile(dist.FisherF(d1, d2), p)
        assert abs(dist.cdf(dist.FisherF(d1, d2), x) - p) <= 1e-9


class TestSampling:
    def test_normal_moments(self):
        x = dist.sample(dist.Normal(0, 1), dist.make_rng(11), 10**6)
        assert abs(x.mean()) <= 0.005
        assert abs(x.var() - 1) <= 5 * math.sqrt(2 / 10**6)

    def test_chi2_moments(self):
        x = dist.sample(dist.ChiSquare(9), dist.make_rng(12), 10**6)
        assert abs(x.mean() - 9) <= 0.02
        assert abs(x.var() - 18) <= 5 * math.sqrt((x**2).var() / 10**6) * 2 + 5 * 0.02

    def test_t_and_f_means(self):
        t = dist.sample(dist.StudentT(5), dist.make_rng(13), 10**6)
        assert abs(t.mean()) <= 5 * math.sqrt(5 / 3 / 10**6)
        f = dist.sample(dist.FisherF(3, 12), dist.make_rng(14), 10**6)
        assert abs(f.mean() - 1.2) <= 5 * f.std() / 1000

    def test_reproducible_streams(self):
        a = dist.sample(dist.Normal(), dist.make_rng(5, 1, 2), 50)
        b = dist.sample(dist.Normal(), dist.make_rng(5, 1, 2), 50)
        c = dist.sample(dist.Normal(), dist.make_rng(5, 1, 3), 50)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_invalid_sd_rejected(self):
        with pytest.raises(ParameterError):
            dist.Normal(5, 0)

    def test_seed_range(self):
        with pytest.raises(ParameterError):
            dist.make_rng(-1)


class TestChiSqMix:
    def test_single_term_scaling(self):
        mix = dist.ChiSqMix([2.0], [3.0])
        for t in (0.3, 1.0, 4.0):
            assert dist.chisq_mix_cdf(mix, 2 * t) == pytest.approx(mp_chi2(t, 3), abs=1e-12)

    def test_additivity(self):
        assert dist.chisq_mix_cdf(dist.ChiSqMix([1, 1], [1, 1]), 2.0) == pytest.approx(0.6321205588285577, abs=1e-12)

    def test_equal_coefficients_reduce(self):
        mix = dist.ChiSqMix([0.7, 0.7, 0.7], [1, 2.5, 3])
        for x in (0.5, 3.0, 7.0):
            assert dist.chisq_mix_cdf(mix, x) == pytest.approx(mp_chi2(x / 0.7, 6.5), abs=1e-12)

    def test_nonpositive_x(self):
        assert dist.chisq_mix_cdf(dist.ChiSqMix([1, 2], [1, 1]), 0.0) == 0.0
        assert dist.chisq_mix_cdf(dist.ChiSqMix([1, 2], [1, 1]), -3.0) == 0.0

    def test_matches_simulation(self):
        rng = dist.make_rng(2024)
        n = 10**7
        draws = rng.chisquare(1, n) + 2 * rng.chisquare(1, n)
        p_hat = np.mean(draws <= 3.0)
        p = dist.chisq_mix_cdf(dist.ChiSqMix([1, 2], [1, 1]), 3.0)
        assert abs(p - p_hat) <= 3 * math.sqrt(p * (1 - p) / n)

    def test_imhof_matches_mpmath_quadrature(self):
        lam, x = [0.3, 1.0, 2.5, 4.0], 6.0

        def integrand(u):
            th = sum(mp.atan(l * u) for l in lam) / 2 - x * u / 2
            rho = mp.exp(sum(mp.log(1 + (l * u) ** 2) for l in lam) / 4)
            return mp.sin(th) / (u * rho)

        ref = float(mp.mpf(1) / 2 - mp.quadosc(integrand, [0, mp.inf], omega=x / 2) / mp.pi)
        mix = dist.ChiSqMix(lam, [1] * 4)
        assert dist.chisq_mix_cdf(mix, x, "imhof") == pytest.approx(ref, abs=1e-9)
        assert dist.chisq_mix_cdf(mix, x, "talbot") == pytest.approx(ref, abs=1e-9)

    @pytest.mark.parametrize("scale", [1.0, 1e3, 1e6])
    def test_far_lower_tail(self, scale):
        # two-term convolution integral as an independent reference
        l1, l2, x = 0.8 * scale, 2.5 * scale, 1.3

        def term(u):
            dens = mp.exp(-u / 2) / mp.sqrt(2 * mp.pi * u)
            return dens * mp.erf(mp.sqrt(max(mp.mpf(x) - l1 * u, 0) / l2 / 2))

        ref = float(mp.quad(term, [0, x / l1 / 2, x / l1]))
        mix = dist.ChiSqMix([l1, l2], [1, 1])
        for method in ("imhof", "talbot"):
            assert dist.chisq_mix_cdf(mix, x, method) == pytest.approx(ref, rel=1e-6, abs=1e-12)

    def test_invalid(self):
        with pytest.raises(ParameterError):
            dist.ChiSqMix([], [])
        with pytest.raises(ParameterError):
            dist.ChiSqMix([1, -1], [1, 1])
        with pytest.raises(ParameterError):
            dist.ChiSqMix([1], [1, 2])

    def test_unconverged_integration_reports_tolerance(self, monkeypatch):
        monkeypatch.setattr(dist, "MIX_ATOL", 1e-30)
        with pytest.raises(NumericError) as err:
            dist.chisq_mix_cdf(dist.ChiSqMix([1, 2], [1, 1]), 3.0)
        assert err.value.achieved is not None
