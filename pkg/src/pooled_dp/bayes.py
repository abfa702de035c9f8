"""Gamma prior, pooled posterior update and Negative Binomial predictives.

The unknown Poisson rate shared by all systems carries a Gamma(alpha0, beta0)
belief. After observing a pooled increment total ``k`` from ``n`` systems over
``t`` periods the belief is Gamma(alpha0 + k, beta0 + n t), and the next
one-period increment of a single system is NB(alpha_t, beta_t / (beta_t + 1)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._nb import nb_truncated
from .errors import (
    IncompatibleDistributions,
    InvalidMoments,
    InvalidMultiplicity,
    InvalidTruncation,
)

DEFAULT_TAIL_EPS = 1e-10
DEFAULT_LOWER_EPS = 1e-16
DEFAULT_KCAP_TAIL = 1e-6


@dataclass(frozen=True)
class PriorBelief:
    alpha0: float
    beta0: float

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise InvalidMoments(f"prior needs alpha0 > 0 and beta0 > 0, got {self}")

    @property
    def mean(self):
        return self.alpha0 / self.beta0


@dataclass(frozen=True)
class PosteriorParams:
    alpha_t: float
    beta_t: float

    @property
    def p(self):
        """Success probability of the one-period predictive."""
        return self.beta_t / (self.beta_t + 1.0)


@dataclass(frozen=True)
class TruncationConfig:
    """Truncation knobs shared verbatim by every solver.

    ``tail_eps`` bounds the upper-tail mass lumped into the last support
    point; ``lower_eps`` bounds the lower-tail mass lumped into the first one
    (kept below double resolution so it only trims underflowed entries).
    ``k_cap`` of ``None`` means "size it from the instance".
    """

    tail_eps: float = DEFAULT_TAIL_EPS
    k_cap: int | None = None
    lower_eps: float = DEFAULT_LOWER_EPS
    k_cap_tail: float = DEFAULT_KCAP_TAIL

    def __post_init__(self):
        if not 0 < self.tail_eps < 1:
            raise InvalidTruncation(f"tail_eps must lie in (0, 1), got {self.tail_eps}")
        if not 0 < self.lower_eps < 1:
            raise InvalidTruncation(f"lower_eps must lie in (0, 1), got {self.lower_eps}")
        if not 0 < self.k_cap_tail < 1:
            raise InvalidTruncation(f"k_cap_tail must lie in (0, 1), got {self.k_cap_tail}")
        if self.k_cap is not None and (int(self.k_cap) != self.k_cap or self.k_cap < 0):
            raise InvalidTruncation(f"k_cap must be a non-negative integer, got {self.k_cap}")


@dataclass(frozen=True, eq=False)
class PredictiveDist:
    """Truncated NB(r, p) with lumped tails.

    ``probs`` covers ``z_min .. z_max``. Entries below ``z_min`` are zero in
    the dense view :attr:`pmf` (their mass, below ``lower_eps``, sits on
    ``z_min``).
    """

    r: float
    p: float
    z_min: int
    probs: np.ndarray = field(repr=False)

    @property
    def z_max(self):
        return self.z_min + len(self.probs) - 1

    @property
    def pmf(self):
        out = np.zeros(self.z_max + 1)
        out[self.z_min:] = self.probs
        return out

    @property
    def support(self):
        return np.arange(self.z_min, self.z_max + 1)

    def cdf(self, upto):
        """CDF on ``0 .. upto`` as an array."""
        return np.cumsum(self.pmf_padded(upto + 1))[: upto + 1]

    def pmf_padded(self, length):
        out = np.zeros(max(length, self.z_max + 1))
        out[self.z_min:self.z_max + 1] = self.probs
        return out

    def tail(self, z):
        """``P(Z >= z)`` under the truncated model."""
        if z <= self.z_min:
            return 1.0
        if z > self.z_max:
            return 0.0
        return float(self.probs[z - self.z_min:].sum())

    @property
    def analytic_mean(self):
        return self.r * (1.0 - self.p) / self.p

    def mean(self):
        return float(np.dot(self.support, self.probs))


def posterior_params(prior, k, n_systems, t):
    """Pooled conjugate update after ``k`` total increments, ``n_systems`` x ``t`` periods."""
    return PosteriorParams(prior.alpha0 + k, prior.beta0 + n_systems * t)


def nb_dist(r, p, trunc=None):
    """Truncated NB(r, p) under ``trunc`` (defaults when ``None``)."""
    trunc = trunc or TruncationConfig()
    if not r > 0:
        raise InvalidMultiplicity(f"NB needs r > 0, got {r}")
    if not 0 < p < 1:
        raise ValueError(f"NB needs p in (0, 1), got {p}")
    z_min, probs = nb_truncated(float(r), float(p), trunc.tail_eps, trunc.lower_eps)
    probs.flags.writeable = False
    return PredictiveDist(float(r), float(p), int(z_min), probs)


def predictive(params, multiplicity, trunc=None):
    """Predictive of the summed next increment of ``multiplicity`` systems.

    ``multiplicity`` 1 gives a single system's increment; ``N - 1`` gives the
    increment of the other systems. Use :func:`point_mass` for zero.
    """
    if not multiplicity > 0:
        raise InvalidMultiplicity(
            f"multiplicity must be positive, got {multiplicity}; use point_mass() for 0"
        )
    return nb_dist(multiplicity * params.alpha_t, params.p, trunc)


def point_mass(p=0.5):
    """Degenerate increment identically zero (``K`` when ``N == 1``)."""
    probs = np.ones(1)
    probs.flags.writeable = False
    return PredictiveDist(0.0, p, 0, probs)


def prior_from_moments(mean_lambda, cv_lambda):
    """Gamma prior matching a given mean and coefficient of variation."""
    if not (mean_lambda > 0 and cv_lambda > 0):
        raise InvalidMoments(
            f"mean and cv must be positive, got mean={mean_lambda}, cv={cv_lambda}"
        )
    alpha0 = 1.0 / cv_lambda ** 2
    return PriorBelief(alpha0, alpha0 / mean_lambda)


def stochastically_dominates(a, b, tail_eps=DEFAULT_TAIL_EPS):
    """Usual stochastic order ``a >=st b`` on the truncated supports."""
    n = max(a.z_max, b.z_max) + 1
    cdf_a = np.cumsum(a.pmf_padded(n))
    cdf_b = np.cumsum(b.pmf_padded(n))
    return bool(np.all(cdf_a <= cdf_b + 10 * tail_eps))


def convolve(a, b, tail_eps=DEFAULT_TAIL_EPS):
    """Distribution of the independent sum, re-truncated with tail lumping."""
    if a.r > 0 and b.r > 0 and not math.isclose(a.p, b.p, rel_tol=0, abs_tol=1e-15):
        raise IncompatibleDistributions(f"p differs: {a.p} vs {b.p}")
    # the zero increment is the identity
    if b.r == 0 and b.z_max == 0:
        return a
    if a.r == 0 and a.z_max == 0:
        return b
    probs = np.convolve(a.probs, b.probs)
    z_min = a.z_min + b.z_min
    # trim the upper tail at the first point whose remaining mass fits tail_eps
    above = np.concatenate([np.cumsum(probs[::-1])[::-1][1:], [0.0]])
    keep = int(np.argmax(above <= tail_eps)) + 1
    out = probs[:keep].copy()
    out[-1] = max(1.0 - out[:-1].sum(), 0.0)
    out.flags.writeable = False
    p = a.p if a.r > 0 else b.p
    return PredictiveDist(a.r + b.r, p, z_min, out)


def total_increment_quantile(prior, n_systems, periods, tail):
    """Smallest k with ``P(pooled increments over periods > k) <= tail``.

    The pooled total over ``periods`` is Poisson(n t Lambda) mixed over the
    Gamma prior, i.e. NB(alpha0, beta0 / (beta0 + n t)).
    """
    if periods <= 0:
        return 0
    p = prior.beta0 / (prior.beta0 + n_systems * periods)
    return nb_quantile(prior.alpha0, p, tail)


def nb_quantile(r, p, tail):
    """Smallest z with exact ``P(Z > z) <= tail`` for untruncated NB(r, p)."""
    from scipy.special import betainc

    def sf(z):
        # P(Z > z) = I_{1-p}(z + 1, r)
        return betainc(z + 1.0, r, 1.0 - p)

    lo, hi = -1, max(1, int(r * (1 - p) / p) + 1)
    while sf(hi) > tail:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if sf(mid) > tail:
            lo = mid
        else:
            hi = mid
    return hi


def default_k_cap(prior, n_systems, horizon, tail=DEFAULT_KCAP_TAIL):
    """Ceiling on the pooled statistic from the prior-predictive of the whole horizon."""
    return total_increment_quantile(prior, n_systems, horizon, tail)
