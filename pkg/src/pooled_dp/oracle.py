"""Brute-force solvers for the joint N-system MDPs.

These enumerate the full state vector ``(x_1, ..., x_N, k)`` and exist to
check the per-system solvers on small instances. Each system's increment is
drawn independently from the ``(k, t)`` predictive and the pooled total moves
to ``min(k + sum z_i, k_cap)``. The expectation is taken one system at a
time, carrying an offset axis for the running sum of increments, so the
N-dimensional outcome grid is never materialised.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .bayes import posterior_params, predictive
from .errors import InstanceTooLarge

DEFAULT_STATE_BUDGET = 50_000_000


@dataclass(frozen=True)
class JointState:
    """One joint state: per-system levels (or inventories) and the pooled total."""

    x_vec: tuple
    k: int

    def __post_init__(self):
        object.__setattr__(self, "x_vec", tuple(int(v) for v in self.x_vec))
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")


@dataclass
class JointSolution:
    """Joint value at the origin plus the epoch-0 table.

    ``values0`` is indexed ``[x_1 - offset, ..., x_N - offset, k]`` where the
    offset is 0 for maintenance and ``x_lo`` for spares.
    """

    value0: float
    values0: np.ndarray
    offset: int = 0

    def value(self, state):
        idx = tuple(x - self.offset for x in state.x_vec) + (state.k,)
        return float(self.values0[idx])


def _joint_expectation(vnext, k, kn, z0, probs, maps):
    """``E[vnext[maps_1(post_1, Z_1), ..., min(k + sum Z, kn)]]`` for all ``post``.

    ``maps[i]`` is an integer array ``(len(post_i), len(probs))`` giving the
    next index of system ``i`` for each post-decision index and increment.
    """
    n = len(maps)
    w = len(probs)
    span = n * (w - 1)
    cols = np.minimum(k + n * z0 + np.arange(span + 1), kn)
    table = vnext[..., cols]
    for i in range(n):
        remaining = (n - 1 - i) * (w - 1)
        acc = None
        for j in range(w):
            part = np.take(table, maps[i][:, j], axis=i)[..., j:j + remaining + 1]
            acc = probs[j] * part if acc is None else acc + probs[j] * part
        table = acc
    return table[..., 0]


def _check_budget(n, n_max, states, budget):
    if n > n_max:
        raise InstanceTooLarge(f"joint oracle supports N <= {n_max}, got N={n}")
    if states > budget:
        raise InstanceTooLarge(
            f"{states} joint states exceed the budget {budget}; reduce N, thresholds or T"
        )


def solve_joint_cbm(instance, budget=DEFAULT_STATE_BUDGET, full=False):
    """Optimal joint maintenance cost from all-new components and ``k = 0``.

    Returns the value, or a :class:`JointSolution` when ``full`` is set.
    """
    n, T = instance.n_systems, instance.horizon
    xi = np.array(instance.xi)
    cp, cu = np.array(instance.cp), np.array(instance.cu)
    k_cap = instance.k_cap
    shape = tuple(int(v) + 1 for v in xi)
    _check_budget(n, 4, int(np.prod(shape)) * (k_cap + 1), budget)

    grids = np.meshgrid(*[np.arange(s) for s in shape], indexing="ij")
    failed = [g >= x for g, x in zip(grids, xi)]
    # terminal charge for every failed component
    v = sum(cu[i] * failed[i] for i in range(n))[..., None] + np.zeros(k_cap + 1)

    masks = list(itertools.product((0, 1), repeat=n))
    for t in range(T - 1, -1, -1):
        vt = np.empty(shape + (k_cap + 1,))
        for k in range(k_cap + 1):
            params = posterior_params(instance.prior, k, n, t)
            dist = predictive(params, 1, instance.trunc)
            z = dist.support
            maps = [np.minimum(np.arange(s)[:, None] + z[None, :], s - 1) for s in shape]
            post = _joint_expectation(v, k, k_cap, dist.z_min, dist.probs, maps)
            best = np.full(shape, np.inf)
            for mask in masks:
                cost = np.zeros(shape)
                idx = []
                feasible = np.ones(shape, dtype=bool)
                for i in range(n):
                    if mask[i]:
                        cost = cost + np.where(failed[i], cu[i], cp[i])
                        idx.append(np.zeros_like(grids[i]))
                    else:
                        feasible &= ~failed[i]
                        idx.append(grids[i])
                cand = np.where(feasible, cost + post[tuple(idx)], np.inf)
                np.minimum(best, cand, out=best)
            vt[..., k] = best
        v = vt
    value0 = float(v[(0,) * n + (0,)])
    return JointSolution(value0, v) if full else value0


def solve_joint_spares(instance, budget=DEFAULT_STATE_BUDGET, full=False):
    """Optimal joint spare-parts cost from zero inventories and ``k = 0``.

    Bounds are resolved exactly as in the per-warehouse solver; pass an
    instance with the bounds the per-warehouse solve ended up using when
    comparing the two.
    """
    inst = instance.resolved()
    n, T = inst.n_systems, inst.horizon
    x_lo, a_hi = inst.x_lo, inst.a_hi
    nx = a_hi - x_lo + 1
    caps = inst.epoch_k_caps()
    _check_budget(n, 3, nx ** n * int(caps.max() + 1), budget)
    cv, ch, cb = np.array(inst.cv), np.array(inst.ch), np.array(inst.cb)
    shape = (nx,) * n
    levels = np.arange(x_lo, a_hi + 1)
    grids = np.meshgrid(*[levels] * n, indexing="ij")

    v = np.zeros(shape + (int(caps[T]) + 1,))
    for t in range(T - 1, -1, -1):
        kn = int(caps[t + 1])
        vt = np.empty(shape + (int(caps[t]) + 1,))
        for k in range(int(caps[t]) + 1):
            params = posterior_params(inst.prior, k, n, t)
            dist = predictive(params, 1, inst.trunc)
            z = dist.support
            amap = np.maximum(np.arange(nx)[:, None] - z[None, :], 0)
            future = _joint_expectation(v, k, kn, dist.z_min, dist.probs, [amap] * n)
            # per-warehouse order-up-to cost of each target level
            over = np.array([
                np.dot(np.clip(a - z, 0, None), dist.probs) if a > 0 else 0.0 for a in levels
            ])
            total = future
            for i in range(n):
                own = cv[i] * levels + ch[i] * over + cb[i] * (dist.analytic_mean - levels + over)
                total = total + own.reshape([-1 if j == i else 1 for j in range(n)])
            # min over a >= x along every axis
            for axis in range(n):
                total = np.flip(np.minimum.accumulate(np.flip(total, axis), axis=axis), axis)
            vt[..., k] = total - sum(cv[i] * grids[i] for i in range(n))
        v = vt
    value0 = float(v[(-x_lo,) * n + (0,)])
    return JointSolution(value0, v, offset=x_lo) if full else value0


__all__ = [
    "JointState",
    "JointSolution",
    "solve_joint_cbm",
    "solve_joint_spares",
    "DEFAULT_STATE_BUDGET",
]
