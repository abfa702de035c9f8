"""Compiled helpers for truncated Negative Binomial pmfs.

Every solver in the package obtains its one-period distributions from
:func:`nb_truncated`, so decomposed and brute-force solvers see bit-identical
probabilities.
"""

import math

import numpy as np
from numba import njit

# Weights below this fraction of the running total are dropped from the
# normalising sum; far below double resolution.
_NEGLIGIBLE = 1e-30
_BLOCK = 32


@njit(cache=True)
def _mode(r, p):
    if r <= 1.0:
        return 0
    return int(math.floor((r - 1.0) * (1.0 - p) / p))


@njit(cache=True)
def _upward(r, q, m, buf):
    """Weights ``w(m+1), w(m+2), ...`` relative to ``w(m) = 1`` into ``buf``.

    Ratios are formed a block at a time (independent divisions) and chained
    by multiplication. Returns the count written and the sum including w(m).
    """
    total = 1.0
    w = 1.0
    n = 0
    while True:
        if n + _BLOCK > buf.shape[0]:
            return -1, total
        z0 = m + n
        for i in range(_BLOCK):
            z = z0 + i
            buf[n + i] = (z + r) * q / (z + 1.0)
        for i in range(_BLOCK):
            w *= buf[n + i]
            buf[n + i] = w
            total += w
        n += _BLOCK
        ratio = (m + n - 1 + r) * q / (m + n)
        rho = q if r < 1.0 else ratio
        if ratio < 1.0 and w <= _NEGLIGIBLE * total * (1.0 - rho):
            return n, total


@njit(cache=True)
def _downward(r, q, m, buf):
    """Weights ``w(m-1), w(m-2), ..., w(lo)`` relative to ``w(m) = 1``."""
    total = 0.0
    w = 1.0
    n = 0
    while n < m:
        cnt = min(_BLOCK, m - n)
        if n + cnt > buf.shape[0]:
            return -1, total
        z0 = m - n
        for i in range(cnt):
            z = z0 - i
            buf[n + i] = z / ((z - 1.0 + r) * q)
        for i in range(cnt):
            w *= buf[n + i]
            buf[n + i] = w
            total += w
        n += cnt
        if n < m:
            ratio = (m - n) / ((m - n - 1.0 + r) * q)
            if ratio < 1.0 and w <= _NEGLIGIBLE * (1.0 - ratio):
                break
    return n, total


@njit(cache=True)
def _weights(r, p):
    """Unnormalised weights on ``lo .. hi`` anchored at the mode."""
    q = 1.0 - p
    m = _mode(r, p)
    size = 256
    while True:
        up = np.empty(size)
        nu, tu = _upward(r, q, m, up)
        if nu >= 0:
            break
        size *= 4
    size = 256
    while True:
        down = np.empty(size)
        nd, td = _downward(r, q, m, down)
        if nd >= 0:
            break
        size *= 4
    lo = m - nd
    w = np.empty(nd + 1 + nu)
    for i in range(nd):
        w[nd - 1 - i] = down[i]
    w[nd] = 1.0
    for i in range(nu):
        w[nd + 1 + i] = up[i]
    return lo, w, tu + td


@njit(cache=True)
def nb_truncated(r, p, tail_eps, lower_eps):
    """Truncated NB(r, p) pmf with both tails lumped onto the end points.

    Weights follow the multiplicative recurrence
    ``w(z+1) = w(z) (z + r)(1 - p) / (z + 1)`` anchored at the mode and are
    normalised afterwards, so nothing underflows for large ``r``.

    Returns
    -------
    z_min : int
        First retained support point; receives the mass of ``Z < z_min``.
    probs : ndarray
        Probabilities for ``z_min .. z_max``; the last entry carries the
        upper tail, the first the lower tail. Sums to one.
    """
    lo, w, total = _weights(r, p)
    n = w.shape[0]
    hi = lo + n - 1

    # smallest z whose upper tail is within tail_eps
    thr = tail_eps * total
    zmax = hi
    acc = 0.0
    for z in range(hi - 1, lo - 1, -1):
        acc += w[z + 1 - lo]
        if acc <= thr:
            zmax = z
        else:
            break
    # largest z whose lower tail is within lower_eps
    thr = lower_eps * total
    zmin = lo
    acc = 0.0
    for z in range(lo + 1, zmax + 1):
        acc += w[z - 1 - lo]
        if acc <= thr:
            zmin = z
        else:
            break

    size = zmax - zmin + 1
    probs = np.empty(size)
    inv = 1.0 / total
    below = 0.0
    for z in range(lo, zmin + 1):
        below += w[z - lo]
    probs[0] = below * inv
    for i in range(1, size):
        probs[i] = w[zmin - lo + i] * inv
    if size > 1:
        head = 0.0
        for i in range(size - 1):
            head += probs[i]
        probs[size - 1] = max(1.0 - head, 0.0)
    else:
        probs[0] = 1.0
    return zmin, probs


@njit(cache=True)
def nb_lower_cdf_tiny(r, p, upto, lower_eps):
    """True when ``P(Z <= upto)`` is below ``lower_eps``.

    Cheap screen used to skip distributions whose retained support starts
    above ``upto``; evaluated in log space from ``pmf(0) = p**r``.
    """
    if upto < 0:
        return True
    q = 1.0 - p
    logw = r * math.log(p)
    s = math.exp(logw)
    for z in range(upto):
        logw += math.log((z + r) * q / (z + 1.0))
        s += math.exp(logw)
    # margin keeps the screen conservative against the exact lumping rule
    return s <= 0.1 * lower_eps
