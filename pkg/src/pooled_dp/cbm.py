"""Per-system condition-based maintenance MDP with pooled learning.

State of one system is ``(x, k)``: its deterioration level ``x`` (all levels
at or above the failure threshold are one absorbing "failed" level) and the
pooled increment total ``k`` of all systems. Each period the system's own
increment ``Z`` and the other systems' summed increment ``K`` are drawn from
the predictives at ``(k, t)``, and ``k`` advances by ``Z + K``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._nb import nb_lower_cdf_tiny, nb_truncated
from .bayes import (
    PriorBelief,
    TruncationConfig,
    default_k_cap,
    point_mass,
    posterior_params,
    predictive,
)
from .errors import InvalidInstance, InvalidTruncation, NotAttained, OutOfDomain


def _as_tuple(value, n, name, cast):
    if np.ndim(value) == 0:
        return (cast(value),) * n
    values = tuple(cast(v) for v in value)
    if len(values) != n:
        raise InvalidInstance(name, f"expected {n} entries, got {len(values)}")
    return values


@dataclass(frozen=True)
class CbmInstance:
    n_systems: int
    horizon: int
    prior: PriorBelief
    xi: tuple
    cp: tuple
    cu: tuple
    trunc: TruncationConfig = field(default_factory=TruncationConfig)

    def __post_init__(self):
        n = self.n_systems
        if int(n) != n or n < 1:
            raise InvalidInstance("n_systems", f"must be a positive integer, got {n}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidInstance("horizon", f"must be a positive integer, got {self.horizon}")
        object.__setattr__(self, "xi", _as_tuple(self.xi, n, "xi", int))
        object.__setattr__(self, "cp", _as_tuple(self.cp, n, "cp", float))
        object.__setattr__(self, "cu", _as_tuple(self.cu, n, "cu", float))
        for i in range(n):
            if self.xi[i] < 1:
                raise InvalidInstance("xi", f"thresholds must be >= 1, got {self.xi[i]}")
            if not 0 < self.cp[i] < self.cu[i]:
                raise InvalidInstance(
                    "cp", f"need 0 < cp < cu, got cp={self.cp[i]}, cu={self.cu[i]}"
                )

    @classmethod
    def symmetric(cls, n_systems, horizon, prior, xi, cp, cu, trunc=None):
        return cls(n_systems, horizon, prior, xi, cp, cu, trunc or TruncationConfig())

    @property
    def k_cap(self):
        if self.trunc.k_cap is not None:
            return int(self.trunc.k_cap)
        return default_k_cap(self.prior, self.n_systems, self.horizon, self.trunc.k_cap_tail)

    def with_trunc(self, **changes):
        from dataclasses import replace

        return replace(self, trunc=replace(self.trunc, **changes))

    def with_systems(self, n_systems):
        """Same per-system data (first system's) for ``n_systems`` symmetric systems."""
        return CbmInstance(
            n_systems, self.horizon, self.prior, self.xi[0], self.cp[0], self.cu[0], self.trunc
        )


@dataclass
class CbmSolveResult:
    """Backward-induction output for one system.

    ``values[t]`` has shape ``(xi + 1, k_cap + 1)``; it is ``None`` for the
    intermediate epochs of a policy-only solve. ``control_limits[t, k]`` is the
    smallest deterioration level at which replacement is optimal.
    """

    xi: int
    k_cap: int
    horizon: int
    values: list
    control_limits: np.ndarray
    value0: float
    diagnostics: dict = field(default_factory=dict)

    def action(self, t, x, k):
        """1 = replace (preventive or corrective), 0 = continue."""
        return int(x >= self.control_limits[t, k])


@njit(cache=True)
def _dot_clamped(probs, row, base, k_cap):
    """``sum_i probs[i] * row[min(base + i, k_cap)]``."""
    n = probs.shape[0]
    acc = 0.0
    if base + n - 1 <= k_cap:
        for i in range(n):
            acc += probs[i] * row[base + i]
        return acc
    for i in range(n):
        j = base + i
        if j > k_cap:
            j = k_cap
        acc += probs[i] * row[j]
    return acc


@njit(cache=True)
def _cbm_epoch(vnext, xi, cp, cu, alpha0, beta_t, n, k_cap, k_hi, k_next,
               tail_eps, lower_eps, vout, limits):
    """One backward step over ``k = 0 .. k_hi``; ``vnext`` is valid up to ``k_next``."""
    p = beta_t / (beta_t + 1.0)
    last = vnext[xi, k_next]
    # failed-row values are bit-identical from jf up to k_next
    jf = k_next
    while jf > 0 and vnext[xi, jf - 1] == last:
        jf -= 1
    r_tab = np.empty((xi + 1, xi))
    cont = np.empty(xi)
    for k in range(k_hi + 1):
        a = alpha0 + k
        # expected next value when the component ends up failed for sure
        if k >= jf:
            b = last
        else:
            s0, ps = nb_truncated(n * a, p, tail_eps, lower_eps)
            b = _dot_clamped(ps, vnext[xi], k + s0, k_cap)
        for x in range(xi):
            cont[x] = b
        if not nb_lower_cdf_tiny(a, p, xi - 1, lower_eps):
            z0, pz = nb_truncated(a, p, tail_eps, lower_eps)
            if n > 1:
                k0, pk = nb_truncated((n - 1) * a, p, tail_eps, lower_eps)
            else:
                k0 = 0
                pk = np.ones(1)
            ztop = min(z0 + pz.shape[0] - 1, xi - 1)
            # r_tab[y, z] = E_K[V(y, k + z + K)] for the outcomes that stay below xi
            for z in range(z0, ztop + 1):
                for y in range(z, xi + 1):
                    r_tab[y, z] = _dot_clamped(pk, vnext[y], k + z + k0, k_cap)
            for x in range(xi):
                acc = 0.0
                for z in range(z0, min(ztop, xi - 1 - x) + 1):
                    acc += pz[z - z0] * (r_tab[x + z, z] - r_tab[xi, z])
                cont[x] = b + acc
        replace = cp + cont[0]
        lim = xi
        for x in range(xi):
            c = cont[x]
            if replace <= c:
                vout[x, k] = replace
                if lim == xi and x > 0:
                    lim = x
            else:
                vout[x, k] = c
        vout[xi, k] = cu + cont[0]
        limits[k] = lim


@njit(cache=True)
def reachable_caps(alpha0, beta0, n, horizon, k_cap, tail_eps, lower_eps):
    """Largest pooled total reachable from ``k = 0`` at each epoch.

    Uses the truncated supports, whose end points grow with ``k``, so the
    frontier only needs evaluating at the previous frontier.
    """
    caps = np.zeros(horizon + 1, dtype=np.int64)
    for t in range(horizon):
        k = caps[t]
        p = (beta0 + n * t) / (beta0 + n * t + 1.0)
        a = alpha0 + k
        s0, ps = nb_truncated(n * a, p, tail_eps, lower_eps)
        step = s0 + ps.shape[0] - 1
        z0, pz = nb_truncated(a, p, tail_eps, lower_eps)
        zk = z0 + pz.shape[0] - 1
        if n > 1:
            k0, pk = nb_truncated((n - 1) * a, p, tail_eps, lower_eps)
            zk += k0 + pk.shape[0] - 1
        caps[t + 1] = min(k + max(step, zk), k_cap)
    return caps


def terminal_layer(xi, cu, k_cap):
    v = np.zeros((xi + 1, k_cap + 1))
    v[xi, :] = cu
    return v


def solve_cbm_decomposed(instance, system_index=1, keep_values=True, reachable_only=False):
    """Backward induction for system ``system_index`` (1-based).

    Parameters
    ----------
    instance : CbmInstance
    system_index : int
        Which system's costs and threshold to use.
    keep_values : bool
        Retain every value layer; otherwise only ``values[0]`` and the
        control limits are kept (two layers live at a time).
    reachable_only : bool
        Solve only the pooled totals reachable from ``k = 0`` under the
        truncated supports. ``value0`` is unchanged; table entries outside
        the reachable band are NaN (values) and 0 (control limits).
    """
    n = instance.n_systems
    if not 1 <= system_index <= n:
        raise OutOfDomain(f"system_index must be in 1..{n}, got {system_index}")
    k_cap = instance.k_cap
    if k_cap < 0:
        raise InvalidTruncation(f"k_cap {k_cap} cannot hold the initial state k=0")
    i = system_index - 1
    xi, cp, cu = instance.xi[i], instance.cp[i], instance.cu[i]
    T = instance.horizon
    prior = instance.prior
    trunc = instance.trunc

    start = time.perf_counter()
    if reachable_only:
        caps = reachable_caps(
            prior.alpha0, prior.beta0, n, T, k_cap, trunc.tail_eps, trunc.lower_eps
        )
    else:
        caps = np.full(T + 1, k_cap, dtype=np.int64)
    limits = np.zeros((T, k_cap + 1), dtype=np.int32)
    vnext = terminal_layer(xi, cu, k_cap)
    values = [None] * (T + 1)
    if keep_values:
        values[T] = vnext
    for t in range(T - 1, -1, -1):
        vout = np.empty_like(vnext) if not reachable_only else np.full_like(vnext, np.nan)
        _cbm_epoch(
            vnext, xi, cp, cu, prior.alpha0, prior.beta0 + n * t, n, k_cap,
            int(caps[t]), int(caps[t + 1]), trunc.tail_eps, trunc.lower_eps, vout, limits[t],
        )
        if keep_values:
            values[t] = vout
        vnext = vout
    values[0] = vnext
    elapsed = 1000.0 * (time.perf_counter() - start)

    diagnostics = {
        "tail_eps": trunc.tail_eps,
        "lower_eps": trunc.lower_eps,
        "k_cap": k_cap,
        "clamp_mass_from_origin": _horizon_tail_mass(prior, n, T, k_cap),
        "solve_ms": elapsed,
    }
    if reachable_only:
        diagnostics["reachable_caps"] = caps.tolist()
    return CbmSolveResult(xi, k_cap, T, values, limits, float(vnext[0, 0]), diagnostics)


def _horizon_tail_mass(prior, n, horizon, k_cap):
    """Prior-predictive probability that pooled increments over the horizon exceed k_cap."""
    from scipy.special import betainc

    p = prior.beta0 / (prior.beta0 + n * horizon)
    return float(betainc(k_cap + 1.0, prior.alpha0, 1.0 - p))


def increment_dist(instance, k, t):
    """Truncated predictive of one system's next increment at ``(k, t)``."""
    params = posterior_params(instance.prior, k, instance.n_systems, t)
    return predictive(params, 1, instance.trunc)


def others_dist(instance, k, t):
    """Truncated predictive of the other ``N - 1`` systems' summed increment."""
    if instance.n_systems == 1:
        return point_mass()
    params = posterior_params(instance.prior, k, instance.n_systems, t)
    return predictive(params, instance.n_systems - 1, instance.trunc)


def closed_form_last_epoch(instance, system_index, x, k):
    """Optimal cost at epoch ``T - 1`` for a working component at level ``x``.

    With only the terminal failure charge left, replacing costs ``cp`` plus
    the chance a new component fails within the period, and continuing costs
    the chance the current one crosses the threshold.
    """
    i = system_index - 1
    xi, cp, cu = instance.xi[i], instance.cp[i], instance.cu[i]
    if not 0 <= x < xi:
        raise OutOfDomain(f"x must satisfy 0 <= x < xi={xi}, got {x}")
    dist = increment_dist(instance, k, instance.horizon - 1)
    replace = cp + dist.tail(xi) * cu
    keep = dist.tail(xi - x) * cu
    return min(replace, keep)


def asymptotic_limit_index(result, t):
    """Smallest ``k*`` with ``control_limits[t, k] == xi`` for all ``k >= k*``."""
    if not 0 <= t < result.horizon:
        raise OutOfDomain(f"t must be in 0..{result.horizon - 1}, got {t}")
    row = result.control_limits[t]
    if row[-1] < result.xi:
        raise NotAttained(
            f"control limit at k_cap={result.k_cap}, t={t} is {row[-1]} < xi={result.xi}"
        )
    below = np.nonzero(row < result.xi)[0]
    return 0 if below.size == 0 else int(below[-1]) + 1


def policy_rows(result):
    """``(t, k, control_limit)`` rows in epoch-major order."""
    T, width = result.control_limits.shape
    t_idx = np.repeat(np.arange(T), width)
    k_idx = np.tile(np.arange(width), T)
    return np.column_stack([t_idx, k_idx, result.control_limits.ravel()])


__all__ = [
    "CbmInstance",
    "CbmSolveResult",
    "solve_cbm_decomposed",
    "closed_form_last_epoch",
    "asymptotic_limit_index",
    "increment_dist",
    "others_dist",
    "terminal_layer",
    "policy_rows",
    "reachable_caps",
]
