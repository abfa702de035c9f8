import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pooled_dp.bayes import (
    PosteriorParams,
    PriorBelief,
    TruncationConfig,
    convolve,
    default_k_cap,
    nb_dist,
    nb_quantile,
    point_mass,
    posterior_params,
    predictive,
    prior_from_moments,
    stochastically_dominates,
)
from pooled_dp.errors import (
    IncompatibleDistributions,
    InvalidMoments,
    InvalidMultiplicity,
    InvalidTruncation,
)

TAIL = 1e-10


class TestPosterior:
    @pytest.mark.parametrize(
        "prior, k, n, t, expected",
        [
            ((4, 4), 3, 2, 5, (7, 14)),
            ((1, 1), 0, 1, 0, (1, 1)),
            ((0.0625, 0.0625), 10, 20, 3, (10.0625, 60.0625)),
        ],
    )
    def test_conjugate_update(self, prior, k, n, t, expected):
        post = posterior_params(PriorBelief(*prior), k, n, t)
        assert (post.alpha_t, post.beta_t) == pytest.approx(expected, abs=1e-15)

    def test_predictive_p(self):
        assert PosteriorParams(7, 14).p == pytest.approx(14 / 15)

    @pytest.mark.parametrize("a, b", [(0, 1), (1, 0), (-1, 2), (1, -0.5)])
    def test_prior_invariants(self, a, b):
        with pytest.raises(InvalidMoments):
            PriorBelief(a, b)


class TestPriorFromMoments:
    @pytest.mark.parametrize(
        "mean, cv, alpha0, beta0",
        [(0.75, 0.5, 4.0, 16 / 3), (1.0, 1.0, 1.0, 1.0), (0.5, 4.0, 0.0625, 0.125)],
    )
    def test_examples(self, mean, cv, alpha0, beta0):
        prior = prior_from_moments(mean, cv)
        assert prior.alpha0 == pytest.approx(alpha0, rel=1e-15)
        assert prior.beta0 == pytest.approx(beta0, rel=1e-15)

    @pytest.mark.parametrize("mean, cv", [(0, 1), (1, 0), (-1, 1), (1, -2)])
    def test_rejects_non_positive(self, mean, cv):
        with pytest.raises(InvalidMoments):
            prior_from_moments(mean, cv)

    @given(st.floats(0.05, 5), st.floats(0.05, 5))
    def test_round_trip(self, mean, cv):
        prior = prior_from_moments(mean, cv)
        assert prior.mean == pytest.approx(mean, rel=1e-12)
        assert 1 / math.sqrt(prior.alpha0) == pytest.approx(cv, rel=1e-12)


class TestPredictive:
    def test_geometric(self):
        d = nb_dist(1.0, 0.5)
        assert d.pmf[:3] == pytest.approx([0.5, 0.25, 0.125], abs=1e-15)

    def test_closed_form_r2(self):
        d = nb_dist(2.0, 0.8)
        assert d.pmf[:2] == pytest.approx([0.64, 0.256], abs=1e-15)

    def test_mean_from_posterior(self):
        d = predictive(PosteriorParams(7, 14), 1)
        assert d.mean() == pytest.approx(0.5, abs=TAIL * d.z_max + 1e-12)
        assert d.analytic_mean == pytest.approx(0.5)

    def test_multiplicity_scales_r(self):
        d = predictive(PosteriorParams(2.5, 3.0), 3)
        assert d.r == pytest.approx(7.5)
        assert d.p == pytest.approx(0.75)

    @pytest.mark.parametrize("m", [0, -1, -0.5])
    def test_rejects_non_positive_multiplicity(self, m):
        with pytest.raises(InvalidMultiplicity):
            predictive(PosteriorParams(1, 1), m)

    def test_point_mass(self):
        d = point_mass()
        assert d.z_max == 0 and d.pmf.tolist() == [1.0]

    def test_truncation_point_is_smallest_quantile(self):
        for r, p in [(0.0625, 1 / 17), (3.5, 0.7), (40.0, 0.95), (1e4, 0.999)]:
            d = nb_dist(r, p)
            assert stats.nbinom.sf(d.z_max, r, p) <= TAIL * (1 + 1e-6)
            assert stats.nbinom.sf(d.z_max - 1, r, p) > TAIL * (1 - 1e-6)

    def test_matches_scipy_below_truncation(self):
        for r, p in [(0.0625, 1 / 17), (0.3, 0.5), (7.0, 14 / 15), (123.4, 0.9), (1e4, 0.9995)]:
            d = nb_dist(r, p)
            z = d.support[1:-1]
            exact = stats.nbinom.pmf(z, r, p)
            np.testing.assert_allclose(d.probs[1:-1], exact, rtol=1e-11)

    def test_tail_lumped_on_last_point(self):
        d = nb_dist(3.5, 0.7)
        lumped = stats.nbinom.pmf(d.z_max, 3.5, 0.7) + stats.nbinom.sf(d.z_max, 3.5, 0.7)
        assert d.probs[-1] == pytest.approx(lumped, rel=1e-9)

    def test_tail_eps_is_respected(self):
        coarse = nb_dist(5.0, 0.6, TruncationConfig(tail_eps=1e-4))
        fine = nb_dist(5.0, 0.6, TruncationConfig(tail_eps=1e-12))
        assert coarse.z_max < fine.z_max

    def test_tail_and_cdf_helpers(self):
        d = nb_dist(1.0, 0.5)
        assert d.tail(0) == 1.0
        assert d.tail(1) == pytest.approx(0.5)
        assert d.tail(d.z_max + 1) == 0.0
        assert d.cdf(2) == pytest.approx([0.5, 0.75, 0.875])

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 1e4), st.floats(1e-3, 1 - 1e-6))
    def test_proper_and_non_negative(self, r, p):
        d = nb_dist(r, p)
        assert np.all(d.probs >= 0)
        assert d.probs.sum() == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0.01, 1e4), st.floats(1e-2, 1 - 1e-6))
    def test_mean_identity(self, r, p):
        d = nb_dist(r, p)
        assert abs(d.mean() - d.analytic_mean) <= max(1e-9, d.z_max * TAIL) * max(1, d.analytic_mean)


class TestTruncationConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"tail_eps": 0}, {"tail_eps": 1}, {"k_cap": -1}, {"k_cap": 2.5}, {"lower_eps": 0}],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidTruncation):
            TruncationConfig(**kwargs)

    def test_default_k_cap_is_horizon_quantile(self):
        prior = PriorBelief(1.0, 1.0)
        k = default_k_cap(prior, 2, 4)
        p = prior.beta0 / (prior.beta0 + 8)
        assert stats.nbinom.sf(k, prior.alpha0, p) <= 1e-6
        assert stats.nbinom.sf(k - 1, prior.alpha0, p) > 1e-6

    def test_nb_quantile_against_scipy(self):
        for r, p, tail in [(0.25, 0.3, 1e-6), (5.0, 0.5, 1e-8), (300.0, 0.99, 1e-3)]:
            q = nb_quantile(r, p, tail)
            assert stats.nbinom.sf(q, r, p) <= tail < stats.nbinom.sf(q - 1, r, p)


def _pred(prior, n, t, k):
    return predictive(posterior_params(prior, k, n, t), 1)


class TestDominance:
    prior = PriorBelief(1.0, 1.0)

    def test_higher_k_dominates(self):
        assert stochastically_dominates(_pred(self.prior, 2, 3, 5), _pred(self.prior, 2, 3, 2))

    def test_reflexive(self):
        d = _pred(self.prior, 2, 3, 4)
        assert stochastically_dominates(d, d)

    def test_lower_k_does_not_dominate(self):
        assert not stochastically_dominates(_pred(self.prior, 2, 3, 0), _pred(self.prior, 2, 3, 8))

    @settings(max_examples=200, deadline=None)
    @given(
        st.floats(0.05, 20),
        st.floats(0.05, 20),
        st.integers(1, 20),
        st.integers(0, 90),
        st.integers(0, 400),
        st.integers(1, 400),
    )
    def test_monotone_in_k(self, alpha0, beta0, n, t, k_lo, gap):
        prior = PriorBelief(alpha0, beta0)
        hi, lo = _pred(prior, n, t, k_lo + gap), _pred(prior, n, t, k_lo)
        assert stochastically_dominates(hi, lo, TAIL)


class TestConvolve:
    def test_geometric_pair(self):
        c = convolve(nb_dist(1.0, 0.5), nb_dist(1.0, 0.5))
        assert c.pmf[:2] == pytest.approx([0.25, 0.25], abs=1e-12)

    def test_point_mass_identity(self):
        a = nb_dist(2.5, 0.6)
        c = convolve(a, point_mass())
        np.testing.assert_array_equal(c.pmf, a.pmf)

    def test_matches_direct(self):
        c = convolve(nb_dist(3.5, 0.7), nb_dist(1.5, 0.7))
        d = nb_dist(5.0, 0.7)
        n = max(c.z_max, d.z_max) + 1
        assert np.max(np.abs(c.pmf_padded(n) - d.pmf_padded(n))) <= 1e-9

    def test_mismatched_p(self):
        with pytest.raises(IncompatibleDistributions):
            convolve(nb_dist(1.0, 0.5), nb_dist(1.0, 0.6))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.05, 50), st.floats(0.05, 50), st.floats(0.05, 0.99))
    def test_closure(self, r1, r2, p):
        c = convolve(nb_dist(r1, p), nb_dist(r2, p))
        d = nb_dist(r1 + r2, p)
        n = max(c.z_max, d.z_max) + 1
        assert np.max(np.abs(c.pmf_padded(n) - d.pmf_padded(n))) <= 1e-9
