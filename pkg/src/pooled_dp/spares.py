"""Per-warehouse spare-parts MDP with pooled demand learning.

State of one warehouse is ``(x, k)``: net inventory ``x`` before ordering and
the pooled demand total ``k`` of all warehouses. Ordering raises inventory to
``a >= x``; the period's demand ``Z`` is then subtracted and ``k`` advances by
``Z + K`` where ``K`` is the other warehouses' summed demand.

Net inventory lives on ``[x_lo, a_hi]``; transitions below ``x_lo`` are
clamped onto it. The pooled total at epoch ``t`` lives on ``[0, k_caps[t]]``
where ``k_caps[t]`` is the prior-predictive quantile of ``t`` periods of pooled
demand, so the grid only spans what the process can plausibly reach.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from ._nb import nb_truncated
from .bayes import (
    PriorBelief,
    TruncationConfig,
    default_k_cap,
    nb_quantile,
    posterior_params,
    predictive,
    total_increment_quantile,
)
from .cbm import _as_tuple
from .errors import BoundsTooTight, InfeasibleAction, InvalidInstance, OutOfDomain

#: Quantile and margin used to size the action ceiling.
ACTION_TAIL = 1e-8
ACTION_MARGIN = 5
MAX_WIDENINGS = 6


@dataclass(frozen=True)
class SparesInstance:
    """Spare-parts problem with ``n_systems`` warehouses.

    ``x_lo`` and ``a_hi`` bound net inventory and the action; ``None`` sizes
    them from the predictives (and widens them if the solve finds them tight).
    Net inventory can reach ``a_hi`` (order up to ``a_hi``, zero demand), so
    the inventory grid is ``[x_lo, a_hi]``.
    """

    n_systems: int
    horizon: int
    prior: PriorBelief
    cv: tuple
    ch: tuple
    cb: tuple
    trunc: TruncationConfig = field(default_factory=TruncationConfig)
    x_lo: int | None = None
    a_hi: int | None = None

    def __post_init__(self):
        n = self.n_systems
        if int(n) != n or n < 1:
            raise InvalidInstance("n_systems", f"must be a positive integer, got {n}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidInstance("horizon", f"must be a positive integer, got {self.horizon}")
        for name in ("cv", "ch", "cb"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name), n, name, float))
        for i in range(n):
            if self.cv[i] < 0:
                raise InvalidInstance("cv", f"transport cost must be >= 0, got {self.cv[i]}")
            if self.ch[i] <= 0:
                raise InvalidInstance("ch", f"holding cost must be > 0, got {self.ch[i]}")
            if self.cb[i] <= 0:
                raise InvalidInstance("cb", f"backorder cost must be > 0, got {self.cb[i]}")
        if (self.x_lo is None) != (self.a_hi is None):
            raise InvalidInstance("x_lo", "give both x_lo and a_hi or neither")
        if self.x_lo is not None and not self.x_lo <= 0 <= self.a_hi:
            raise InvalidInstance(
                "x_lo", f"need x_lo <= 0 <= a_hi, got x_lo={self.x_lo}, a_hi={self.a_hi}"
            )

    @classmethod
    def symmetric(cls, n_systems, horizon, prior, cv, ch, cb, trunc=None):
        return cls(n_systems, horizon, prior, cv, ch, cb, trunc or TruncationConfig())

    @property
    def x_hi(self):
        return self.a_hi

    @property
    def k_cap(self):
        if self.trunc.k_cap is not None:
            return int(self.trunc.k_cap)
        return default_k_cap(self.prior, self.n_systems, self.horizon, self.trunc.k_cap_tail)

    @property
    def bounds_fixed(self):
        return self.x_lo is not None

    def epoch_k_caps(self):
        """Largest pooled total kept at each epoch ``0 .. T``."""
        caps = []
        for t in range(self.horizon + 1):
            q = total_increment_quantile(self.prior, self.n_systems, t, self.trunc.k_cap_tail)
            caps.append(min(self.k_cap, q))
        return np.array(caps, dtype=np.int64)

    def with_bounds(self, x_lo, a_hi):
        return replace(self, x_lo=int(x_lo), a_hi=int(a_hi))

    def with_trunc(self, **changes):
        return replace(self, trunc=replace(self.trunc, **changes))

    def resolved(self):
        """Copy with explicit bounds (auto-sized when unset)."""
        if self.bounds_fixed:
            return self
        a_hi = auto_action_ceiling(self)
        return self.with_bounds(-a_hi, a_hi)


def auto_action_ceiling(instance):
    """Upper ``1 - 1e-8`` quantile of the largest one-period predictive, plus a margin."""
    caps = instance.epoch_k_caps()
    prior, n = instance.prior, instance.n_systems
    top = 0
    for t in range(instance.horizon):
        params = posterior_params(prior, int(caps[t]), n, t)
        top = max(top, nb_quantile(params.alpha_t, params.p, ACTION_TAIL))
    return top + ACTION_MARGIN


@dataclass
class SparesSolveResult:
    """Backward-induction output for one warehouse.

    ``values[t]`` has shape ``(a_hi - x_lo + 1, k_caps[t] + 1)`` with row
    ``x - x_lo``. ``order_up_to[t][k]`` is the target level; the action at
    ``x`` is ``max(x, order_up_to[t][k])``.
    """

    x_lo: int
    a_hi: int
    k_caps: np.ndarray
    horizon: int
    values: list
    order_up_to: list
    value0: float
    diagnostics: dict = field(default_factory=dict)
    warehouse: int = 1
    instance: SparesInstance | None = None
    g_tables: list | None = None

    @property
    def x_grid(self):
        return np.arange(self.x_lo, self.a_hi + 1)

    def value(self, t, x, k):
        return float(self.values[t][x - self.x_lo, k])

    def action(self, t, x, k):
        return max(int(x), int(self.order_up_to[t][k]))


def direct_cost(instance, warehouse, a, x, k, t):
    """Expected transport, holding and backorder cost of raising ``x`` to ``a``."""
    if a < x:
        raise InfeasibleAction(f"order-up-to level a={a} is below inventory x={x}")
    i = warehouse - 1
    dist = _demand(instance, k, t)
    return instance.cv[i] * (a - x) + _newsvendor(dist, a, instance.ch[i], instance.cb[i])


def _demand(instance, k, t):
    params = posterior_params(instance.prior, k, instance.n_systems, t)
    return predictive(params, 1, instance.trunc)


def _expected_overage(dist, a):
    """``E[(a - Z)^+]`` under the truncated pmf."""
    if a <= 0:
        return 0.0
    z = dist.support
    mask = z <= a
    return float(np.dot(a - z[mask], dist.probs[mask]))


def _newsvendor(dist, a, ch, cb):
    over = _expected_overage(dist, a)
    return ch * over + cb * (dist.analytic_mean - a + over)


def g_function(instance, warehouse, a, k, t, next_values=None, next_k_cap=None):
    """Order-up-to objective ``G_t(a, k)`` under the shared truncated model.

    Parameters
    ----------
    instance : SparesInstance
        Bounds are auto-sized if unset.
    next_values : ndarray or None
        Layer ``t + 1`` on the ``[x_lo, a_hi] x [0, next_k_cap]`` grid;
        ``None`` stands for the zero terminal layer.
    next_k_cap : int, optional
        Defaults to the width of ``next_values``.
    """
    inst = instance.resolved()
    i = warehouse - 1
    dist = _demand(inst, k, t)
    g = inst.cv[i] * a + _newsvendor(dist, a, inst.ch[i], inst.cb[i])
    if next_values is None:
        return g
    kn = next_values.shape[1] - 1 if next_k_cap is None else next_k_cap
    n = inst.n_systems
    if n > 1:
        params = posterior_params(inst.prior, k, n, t)
        others = predictive(params, n - 1, inst.trunc)
        k_support, k_probs = others.support, others.probs
    else:
        k_support, k_probs = np.zeros(1, dtype=int), np.ones(1)
    future = 0.0
    for z, pz in zip(dist.support, dist.probs):
        row = max(a - z, inst.x_lo) - inst.x_lo
        cols = np.minimum(k + z + k_support, kn)
        future += pz * float(np.dot(k_probs, next_values[row, cols]))
    return g + future


@njit(cache=True)
def _spares_epoch(vnext, kn, k_hi, x_lo, a_hi, cv, ch, cb, alpha0, beta_t, n,
                  tail_eps, lower_eps, vout, delta, gout, clamp):
    p = beta_t / (beta_t + 1.0)
    nx = a_hi - x_lo + 1
    g = np.empty(nx)
    for k in range(k_hi + 1):
        a0 = alpha0 + k
        z0, pz = nb_truncated(a0, p, tail_eps, lower_eps)
        if n > 1:
            k0, pk = nb_truncated((n - 1) * a0, p, tail_eps, lower_eps)
        else:
            k0 = 0
            pk = np.ones(1)
        wz = pz.shape[0]
        mean = a0 * (1.0 - p) / p
        # r_tab[y, j] = E_K[V(x_lo + y, k + z0 + j + K)]
        r_tab = np.empty((nx, wz))
        for j in range(wz):
            base = k + z0 + j + k0
            for y in range(nx):
                acc = 0.0
                for m in range(pk.shape[0]):
                    col = base + m
                    if col > kn:
                        col = kn
                    acc += pk[m] * vnext[y, col]
                r_tab[y, j] = acc
        for ia in range(nx):
            a = x_lo + ia
            over = 0.0
            fut = 0.0
            for j in range(wz):
                z = z0 + j
                if z < a:
                    over += (a - z) * pz[j]
                y = ia - z
                if y < 0:
                    y = 0
                fut += pz[j] * r_tab[y, j]
            g[ia] = cv * a + ch * over + cb * (mean - a + over) + fut
            gout[ia, k] = g[ia]
        # smallest a with a non-negative forward difference
        d = nx - 1
        for ia in range(nx - 1):
            if g[ia + 1] - g[ia] >= 0.0:
                d = ia
                break
        delta[k] = x_lo + d
        best = g[nx - 1]
        for ia in range(nx - 1, -1, -1):
            if g[ia] < best:
                best = g[ia]
            vout[ia, k] = best - cv * (x_lo + ia)
        # demand mass pushed below x_lo from the smallest action ever taken
        mass = 0.0
        for j in range(wz):
            if z0 + j > d:
                mass += pz[j]
        clamp[k] = mass


def solve_spares_decomposed(instance, warehouse=1, keep_g=False):
    """Backward induction for warehouse ``warehouse`` (1-based).

    With auto-sized bounds the grid is widened and the solve repeated when the
    order-up-to level touches ``a_hi`` or clamping below ``x_lo`` carries more
    than ``10 * tail_eps``. Fixed bounds raise :class:`BoundsTooTight` instead.
    """
    n = instance.n_systems
    if not 1 <= warehouse <= n:
        raise OutOfDomain(f"warehouse must be in 1..{n}, got {warehouse}")
    inst = instance.resolved()
    for _ in range(MAX_WIDENINGS + 1):
        try:
            return _solve_spares(inst, warehouse, keep_g)
        except BoundsTooTight:
            if instance.bounds_fixed:
                raise
            span = max(ACTION_MARGIN, inst.a_hi // 2)
            inst = inst.with_bounds(inst.x_lo - span, inst.a_hi + span)
    return _solve_spares(inst, warehouse, keep_g)


def _solve_spares(inst, warehouse, keep_g):
    i = warehouse - 1
    T, n = inst.horizon, inst.n_systems
    prior, trunc = inst.prior, inst.trunc
    caps = inst.epoch_k_caps()
    nx = inst.a_hi - inst.x_lo + 1
    limit = 10.0 * trunc.tail_eps

    start = time.perf_counter()
    values = [None] * (T + 1)
    values[T] = np.zeros((nx, caps[T] + 1))
    order_up_to = [None] * T
    g_tables = [None] * T
    worst_clamp = 0.0
    degenerate = 0
    for t in range(T - 1, -1, -1):
        kh = int(caps[t])
        vout = np.empty((nx, kh + 1))
        delta = np.empty(kh + 1, dtype=np.int64)
        gout = np.empty((nx, kh + 1))
        clamp = np.empty(kh + 1)
        _spares_epoch(
            values[t + 1], int(caps[t + 1]), kh, inst.x_lo, inst.a_hi,
            inst.cv[i], inst.ch[i], inst.cb[i], prior.alpha0, prior.beta0 + n * t, n,
            trunc.tail_eps, trunc.lower_eps, vout, delta, gout, clamp,
        )
        top = np.nonzero(delta >= inst.a_hi)[0]
        if top.size:
            raise BoundsTooTight(
                f"order-up-to level reaches a_hi={inst.a_hi} at k={top[0]}, t={t}",
                k=int(top[0]), t=t,
            )
        bad = np.nonzero(clamp > limit)[0]
        if bad.size:
            raise BoundsTooTight(
                f"clamped mass {clamp[bad[0]]:.3g} below x_lo={inst.x_lo} "
                f"exceeds {limit:.3g} at k={bad[0]}, t={t}",
                k=int(bad[0]), t=t,
            )
        worst_clamp = max(worst_clamp, float(clamp.max()))
        degenerate += int(np.count_nonzero(delta <= inst.x_lo))
        values[t] = vout
        order_up_to[t] = delta
        if keep_g:
            g_tables[t] = gout
    elapsed = 1000.0 * (time.perf_counter() - start)

    diagnostics = {
        "tail_eps": trunc.tail_eps,
        "lower_eps": trunc.lower_eps,
        "k_caps": caps.tolist(),
        "x_lo": inst.x_lo,
        "a_hi": inst.a_hi,
        "max_clamped_mass": worst_clamp,
        "degenerate_order_up_to": degenerate,
        "solve_ms": elapsed,
    }
    return SparesSolveResult(
        inst.x_lo, inst.a_hi, caps, T, values, order_up_to,
        float(values[0][-inst.x_lo, 0]), diagnostics, warehouse, inst,
        g_tables if keep_g else None,
    )


def policy_rows(result):
    """``(t, k, order_up_to)`` rows in epoch-major order."""
    rows = [
        (t, k, int(d))
        for t in range(result.horizon)
        for k, d in enumerate(result.order_up_to[t])
    ]
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def value_rows(result):
    """``(t, x, k, value)`` rows in epoch-major order."""
    out = []
    xs = result.x_grid
    for t, layer in enumerate(result.values):
        k_idx = np.tile(np.arange(layer.shape[1]), layer.shape[0])
        x_idx = np.repeat(xs, layer.shape[1])
        out.append(np.column_stack([np.full(layer.size, t), x_idx, k_idx, layer.ravel()]))
    return np.vstack(out)


__all__ = [
    "SparesInstance",
    "SparesSolveResult",
    "direct_cost",
    "g_function",
    "solve_spares_decomposed",
    "auto_action_ceiling",
    "policy_rows",
    "value_rows",
]
