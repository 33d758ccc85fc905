"""Compiled Gibbs kernels.

Random numbers come from numba's internal Mersenne Twister, reseeded at the
start of every chain, so a chain is a pure function of its seed.

Dictionaries are passed column-sparse: ``ptr``/``rows``/``vals`` hold the
nonzero entries of each column (CSC layout).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT2 = math.sqrt(2.0)

# accumulator slots for the scalar chain statistics
S_COUNT = 0
S_LOGTAU = 1
S_TAU = 2
S_INVTAU = 3
S_TAU_RSS = 4
S_ABS = 5
S_ABS_OVER_B = 6
N_SCALARS = 7

MODE_AGGREGATED = 0
MODE_LITERAL_DEVICE = 1
MODE_LITERAL_AGGREGATE = 2


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def log_mills(x):
    """log of the Mills ratio (1 - Phi(x)) / phi(x) for x >= 5 (continued fraction)."""
    f = x
    for k in range(80, 0, -1):
        f = x + k / f
    return -math.log(f)


@njit(cache=True)
def half_sq_plus_log_ndtr(z):
    """z**2 / 2 + log Phi(z), stable for very negative z."""
    if z > -5.0:
        return 0.5 * z * z + math.log(0.5 * math.erfc(-z / _SQRT2))
    return -_LOG_SQRT_2PI + log_mills(-z)


@njit(cache=True)
def std_normal_above(a):
    """Standard normal truncated to [a, inf)."""
    if a < 0.45:
        while True:
            z = np.random.standard_normal()
            if z >= a:
                return z
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + np.random.exponential(1.0) / alpha
        d = z - alpha
        if np.random.random() <= math.exp(-0.5 * d * d):
            return z


@njit(cache=True)
def draw_coefficient(A, B, tau, b, nonneg):
    """One draw from p(x) ~ exp(-tau/2 (A x^2 - 2 B x) - |x| / b)."""
    if A <= 0.0:
        e = np.random.exponential(b)
        if nonneg or np.random.random() < 0.5:
            return e
        return -e
    prec = tau * A
    sd = 1.0 / math.sqrt(prec)
    m = B / A
    shift = 1.0 / (prec * b)
    mu_p = m - shift
    if nonneg:
        x = mu_p + sd * std_normal_above(-mu_p / sd)
        return x if x > 0.0 else 0.0
    mu_n = m + shift
    lw_p = half_sq_plus_log_ndtr(mu_p / sd)
    lw_n = half_sq_plus_log_ndtr(-mu_n / sd)
    p_pos = 1.0 / (1.0 + math.exp(lw_n - lw_p)) if lw_n - lw_p < 700.0 else 0.0
    if np.random.random() < p_pos:
        x = mu_p + sd * std_normal_above(-mu_p / sd)
        return x if x > 0.0 else 0.0
    x = mu_n - sd * std_normal_above(mu_n / sd)
    return x if x < 0.0 else -0.0


@njit(cache=True)
def draw_coefficients(A, B, tau, b, nonneg, size, s):
    np.random.seed(s)
    out = np.empty(size)
    for k in range(size):
        out[k] = draw_coefficient(A, B, tau, b, nonneg)
    return out


@njit(cache=True)
def draw_gammas(shape, rate, size, s):
    np.random.seed(s)
    out = np.empty(size)
    for k in range(size):
        out[k] = np.random.gamma(shape, 1.0 / rate)
    return out


@njit(cache=True)
def residual(y, x, ptr, rows, vals):
    r = y.copy()
    for j in range(x.shape[0]):
        xj = x[j]
        if xj != 0.0:
            for k in range(ptr[j], ptr[j + 1]):
                r[rows[k]] -= vals[k] * xj
    return r


@njit(cache=True)
def run_chain(y, ptr, rows, vals, colsq, bvec, alpha0, beta0, T, burn, nonneg, s,
              mode, scalars, sx2, snum, dense_num, store_x, store_tau):
    """Run one Gibbs chain on observation ``y`` and accumulate retained-sample statistics.

    Each iteration draws tau given the residual, then every coefficient in
    ascending order.  For retained samples the function adds to
      scalars   counts and tau / |x| sums (see the S_* slots)
      sx2[j]    sum of x_j^2
      snum      numerator of the dictionary update: per nonzero entry of
                the column (``dense_num`` False) or for all N rows of every
                column (``dense_num`` True, shape M x N)
    and, when ``store_x`` has rows, records x and tau per retained sample.
    """
    np.random.seed(s)
    N = y.shape[0]
    M = ptr.shape[0] - 1
    x = np.zeros(M)
    tau = alpha0 / beta0
    alpha_n = alpha0 + 0.5 * N
    n_store = store_x.shape[0]
    kept = 0
    for t in range(1, T + 1):
        r = residual(y, x, ptr, rows, vals)
        rss = 0.0
        for i in range(N):
            rss += r[i] * r[i]
        tau = np.random.gamma(alpha_n, 1.0 / (beta0 + 0.5 * rss))
        for j in range(M):
            xj = x[j]
            B = 0.0
            for k in range(ptr[j], ptr[j + 1]):
                B += vals[k] * r[rows[k]]
            A = colsq[j]
            B += A * xj
            xn = draw_coefficient(A, B, tau, bvec[j], nonneg)
            dx = xn - xj
            if dx != 0.0:
                for k in range(ptr[j], ptr[j + 1]):
                    r[rows[k]] -= vals[k] * dx
            x[j] = xn
        if t <= burn:
            continue
        rss = 0.0
        for i in range(N):
            rss += r[i] * r[i]
        scalars[S_COUNT] += 1.0
        scalars[S_LOGTAU] += math.log(tau)
        scalars[S_TAU] += tau
        scalars[S_INVTAU] += 1.0 / tau
        scalars[S_TAU_RSS] += tau * rss
        for j in range(M):
            a = abs(x[j])
            scalars[S_ABS] += a
            scalars[S_ABS_OVER_B] += a / bvec[j]
            sx2[j] += x[j] * x[j]
        if mode == MODE_AGGREGATED:
            if dense_num:
                for j in range(M):
                    xj = x[j]
                    if xj != 0.0:
                        for i in range(N):
                            snum[j, i] += xj * r[i]
                        # own contribution: r_i + H_ij x_j
                        for k in range(ptr[j], ptr[j + 1]):
                            snum[j, rows[k]] += vals[k] * xj * xj
            else:
                for j in range(M):
                    xj = x[j]
                    for k in range(ptr[j], ptr[j + 1]):
                        snum[0, k] += xj * (r[rows[k]] + vals[k] * xj)
        else:
            # literal per-sample ratios; other = sum_{j' != j} H_ij' x_j'
            for j in range(M):
                xj = x[j]
                if xj == 0.0:
                    continue
                if mode == MODE_LITERAL_DEVICE:
                    den = xj * xj
                else:
                    den = 2.0 * xj
                if dense_num:
                    for i in range(N):
                        other = y[i] - r[i]
                        snum[j, i] += _literal_num(mode, y[i], other) / den
                    for k in range(ptr[j], ptr[j + 1]):
                        i = rows[k]
                        other = y[i] - r[i]
                        snum[j, i] += (_literal_num(mode, y[i], other - vals[k] * xj)
                                       - _literal_num(mode, y[i], other)) / den
                else:
                    for k in range(ptr[j], ptr[j + 1]):
                        i = rows[k]
                        other = y[i] - r[i] - vals[k] * xj
                        snum[0, k] += _literal_num(mode, y[i], other) / den
        if kept < n_store:
            for j in range(M):
                store_x[kept, j] = x[j]
            store_tau[kept] = tau
        kept += 1
    return kept


@njit(cache=True)
def _literal_num(mode, yi, other):
    if mode == MODE_LITERAL_DEVICE:
        return yi - other
    return 2.0 * yi - other
