"""Bayesian sparse coding with a Laplace coefficient prior, fitted by Monte-Carlo EM.

Model for one day ``y`` (length N) of one device::

    y = H x + u,   u ~ N(0, 1/tau),   x_j ~ Laplace(0, b),   tau ~ Gamma(alpha0, beta0)

Gamma is parametrized by shape and rate (mean ``alpha / beta``).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse, special

from . import _kernels as K

log = logging.getLogger(__name__)

B_MIN = 1e-6
ZERO_ACTIVATION = 1e-12
H_MODES = ("aggregated", "paper-literal")

# purpose tags for derived chain seeds
SEED_DEVICE, SEED_AGGREGATE, SEED_DISAGG, SEED_DRAW = 1, 2, 3, 4


@dataclass(frozen=True)
class GibbsConfig:
    T: int = 500
    s: int = 100
    seed: int = 0
    nonneg_coeffs: bool = True
    em_iters: int = 15
    em_tol: float = 1e-3
    h_update: str = "aggregated"
    # update only the nonzero entries of each dictionary column
    support_only: bool = True

    def __post_init__(self):
        if not 0 <= self.s < self.T:
            raise ValueError(f"need 0 <= s < T, got s={self.s}, T={self.T}")
        if self.em_iters < 0:
            raise ValueError("em_iters must be >= 0")
        if self.h_update not in H_MODES:
            raise ValueError(f"h_update must be one of {H_MODES}")

    @property
    def retained(self) -> int:
        return self.T - self.s


@dataclass
class GibbsSample:
    x: np.ndarray
    tau: float


@dataclass
class DeviceModel:
    device_id: str
    H: np.ndarray
    b: float = 0.5
    alpha0: float = 1.0
    beta0: float = 1.0
    span: tuple[int, ...] = ()
    q_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        if not (self.b > 0 and self.alpha0 > 0 and self.beta0 > 0):
            raise ValueError("b, alpha0 and beta0 must be positive")

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]


def derive_seed(seed: int, *keys: int) -> int:
    """32-bit chain seed derived from the run seed and integer keys."""
    ss = np.random.SeedSequence([int(seed) % (1 << 64), *(int(k) for k in keys)])
    return int(ss.generate_state(1)[0])


def _csc(H: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    m = sparse.csc_matrix(H)
    m.sort_indices()
    return (m.indptr.astype(np.int64), m.indices.astype(np.int64),
            m.data.astype(np.float64))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("NaN or infinite input")


# -- conditionals --------------------------------------------------------------

def tau_posterior(y, x, H, alpha0: float, beta0: float) -> tuple[float, float]:
    """(alpha_N, beta_N) of the Gamma conditional of the noise precision."""
    y, x, H = np.asarray(y, float), np.asarray(x, float), np.asarray(H, float)
    _check_finite(y, x, H)
    r = y - H @ x
    return alpha0 + 0.5 * len(y), beta0 + 0.5 * float(r @ r)


def sample_tau(y, x, H, alpha0: float, beta0: float, rng: np.random.Generator,
               size: int | None = None):
    a_n, b_n = tau_posterior(y, x, H, alpha0, beta0)
    draws = K.draw_gammas(a_n, b_n, 1 if size is None else size,
                          int(rng.integers(1 << 32)))
    return float(draws[0]) if size is None else draws


def coefficient_terms(j: int, y, x, H) -> tuple[float, float]:
    """(A, B) of the conditional exp(-tau/2 (A x^2 - 2 B x) - |x| / b) of x_j."""
    y, x, H = np.asarray(y, float), np.asarray(x, float), np.asarray(H, float)
    h = H[:, j]
    others = H @ x - h * x[j]
    return float(h @ h), float(h @ (y - others))


def conditional_logpdf(xs, A: float, B: float, tau: float, b: float,
                       nonneg: bool = True) -> np.ndarray:
    """Unnormalized log density of the coefficient conditional."""
    xs = np.asarray(xs, dtype=float)
    out = -0.5 * tau * (A * xs * xs - 2 * B * xs) - np.abs(xs) / b
    if nonneg:
        out = np.where(xs >= 0, out, -np.inf)
    return out


def draw_coefficient(A: float, B: float, tau: float, b: float, nonneg: bool,
                     rng: np.random.Generator, size: int = 1) -> np.ndarray:
    _check_finite(np.array([A, B, tau, b]))
    if tau <= 0 or b <= 0:
        raise ValueError("tau and b must be positive")
    return K.draw_coefficients(float(A), float(B), float(tau), float(b), bool(nonneg),
                               int(size), int(rng.integers(1 << 32)))


def sample_xj(j: int, y, x, H, tau: float, b: float, rng: np.random.Generator,
              nonneg: bool = True) -> float:
    """Exact draw of x_j given everything else.

    The conditional is a two-piece truncated Gaussian mixture (one piece
    when ``nonneg``); a zero column leaves only the Laplace prior.
    """
    A, B = coefficient_terms(j, y, x, H)
    return float(draw_coefficient(A, B, tau, b, nonneg, rng)[0])


# -- chains --------------------------------------------------------------------

class ChainStats:
    """Retained-sample sufficient statistics pooled over chains."""

    def __init__(self, H: np.ndarray, mode: str, support_only: bool):
        self.H = H
        self.ptr, self.rows, self.vals = _csc(H)
        self.colsq = np.asarray((H * H).sum(axis=0), dtype=float)
        self.mode = {"aggregated": K.MODE_AGGREGATED,
                     "paper-literal": K.MODE_LITERAL_DEVICE,
                     "paper-literal-aggregate": K.MODE_LITERAL_AGGREGATE}[mode]
        self.support_only = support_only
        M = H.shape[1]
        self.scalars = np.zeros(K.N_SCALARS)
        self.sx2 = np.zeros(M)
        if support_only:
            self.snum = np.zeros((1, len(self.vals)))
        else:
            self.snum = np.zeros((M, H.shape[0]))

    def run(self, y, bvec, alpha0, beta0, cfg: GibbsConfig, seed: int,
            store: int = 0) -> tuple[np.ndarray, np.ndarray]:
        M = self.H.shape[1]
        store_x = np.zeros((store, M))
        store_tau = np.zeros(store)
        K.run_chain(np.ascontiguousarray(y, dtype=float), self.ptr, self.rows, self.vals,
                    self.colsq, bvec, float(alpha0), float(beta0), int(cfg.T), int(cfg.s),
                    bool(cfg.nonneg_coeffs), int(seed), self.mode, self.scalars, self.sx2,
                    self.snum, not self.support_only, store_x, store_tau)
        return store_x, store_tau

    @property
    def count(self) -> float:
        return float(self.scalars[K.S_COUNT])

    def q_value(self, N: int, bvec, alpha0: float, beta0: float, per_chain: int) -> float:
        """Monte-Carlo Q summed over chains (each chain averaged over its samples)."""
        s = self.scalars
        cnt = s[K.S_COUNT]
        f1 = 0.5 * N * (s[K.S_LOGTAU] - cnt * math.log(2 * math.pi)) - 0.5 * s[K.S_TAU_RSS]
        f2 = cnt * float(np.sum(np.log(1.0 / (2.0 * np.asarray(bvec))))) - s[K.S_ABS_OVER_B]
        f3 = (cnt * (alpha0 * math.log(beta0) - special.gammaln(alpha0))
              + (alpha0 - 1) * s[K.S_LOGTAU] - beta0 * s[K.S_TAU])
        return float((f1 + f2 + f3) / per_chain)

    def updated_H(self, nonneg: bool) -> np.ndarray:
        H = self.H
        M = H.shape[1]
        active = self.sx2 >= ZERO_ACTIVATION
        if self.mode == K.MODE_AGGREGATED:
            denom = np.where(active, self.sx2, 1.0)
        else:
            denom = np.full(M, max(self.count, 1.0))
        if self.support_only:
            new = H.copy()
            cols = np.repeat(np.arange(M), np.diff(self.ptr))
            upd = active[cols]
            new[self.rows[upd], cols[upd]] = self.snum[0, upd] / denom[cols[upd]]
        else:
            new = np.where(active[None, :], (self.snum / denom[:, None]).T, H)
        return finalize_columns(new, H, nonneg)


def finalize_columns(new: np.ndarray, old: np.ndarray, nonneg: bool) -> np.ndarray:
    """Clip (under the nonnegative policy) and renormalize; degenerate columns keep ``old``."""
    new = np.array(new, dtype=float)
    if nonneg:
        np.maximum(new, 0.0, out=new)
    norms = np.linalg.norm(new, axis=0)
    bad = ~(np.isfinite(norms) & (norms > 0))
    norms[bad] = 1.0
    new /= norms
    new[:, bad] = old[:, bad]
    return new


def gibbs_chain(y, H, b, alpha0: float, beta0: float, cfg: GibbsConfig,
                seed: int | None = None) -> list[GibbsSample]:
    """Retained samples of one chain started at x = 0, tau = alpha0 / beta0.

    ``b`` may be a scalar or one Laplace scale per column.
    """
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    _check_finite(y, H)
    M = H.shape[1]
    bvec = np.broadcast_to(np.asarray(b, dtype=float), (M,)).copy()
    stats = ChainStats(H, "aggregated", True)
    xs, taus = stats.run(y, bvec, alpha0, beta0, cfg,
                         cfg.seed if seed is None else seed, store=cfg.retained)
    return [GibbsSample(xs[t].copy(), float(taus[t])) for t in range(cfg.retained)]


def stack(samples: Sequence[GibbsSample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.vstack([s.x for s in samples]),
            np.array([s.tau for s in samples], dtype=float))


# -- E/M steps on explicit samples -----------------------------------------------

def evaluate_Q(samples: Sequence[GibbsSample], y, H, b, alpha0: float, beta0: float) -> float:
    """Monte-Carlo average of the complete-data log likelihood F1 + F2 + F3."""
    if not samples:
        raise ValueError("no samples")
    X, taus = stack(samples)
    y = np.asarray(y, dtype=float)
    H = np.asarray(H, dtype=float)
    bvec = np.broadcast_to(np.asarray(b, dtype=float), (H.shape[1],))
    N = len(y)
    resid = y[None, :] - X @ H.T
    f1 = 0.5 * N * np.log(taus / (2 * np.pi)) - 0.5 * taus * (resid ** 2).sum(axis=1)
    f2 = np.sum(np.log(1.0 / (2.0 * bvec))) - (np.abs(X) / bvec).sum(axis=1)
    f3 = (alpha0 * np.log(beta0) - special.gammaln(alpha0)
          + (alpha0 - 1) * np.log(taus) - beta0 * taus)
    return float(np.mean(f1 + f2 + f3))


def mstep_update_H(samples: Sequence[GibbsSample], y, H, mode: str = "aggregated",
                   support_only: bool = False, nonneg: bool = False) -> np.ndarray:
    """Dictionary update from retained samples.

    ``y`` is one observation shared by all samples or one row per sample.
    ``aggregated`` solves the Monte-Carlo stationarity condition per
    entry, sum_t x_j (y_i - sum_{j' != j} H_ij' x_j') / sum_t x_j^2;
    ``paper-literal`` averages the per-sample ratio with an x_j^2
    denominator.  Columns are then renormalized; columns whose summed
    squared activation is below 1e-12 are left unchanged.
    """
    X, _ = stack(samples)
    H = np.asarray(H, dtype=float)
    Y = np.broadcast_to(np.asarray(y, dtype=float), (len(X), H.shape[0]))
    fitted = X @ H.T  # S x N
    sx2 = (X ** 2).sum(axis=0)
    active = sx2 >= ZERO_ACTIVATION
    new = H.copy()
    for j in np.flatnonzero(active):
        xj = X[:, j]
        partial = Y - fitted + np.outer(xj, H[:, j])  # y_i - sum_{j' != j}
        if mode == "aggregated":
            col = (xj[:, None] * partial).sum(axis=0) / sx2[j]
        elif mode == "paper-literal":
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = partial / (xj ** 2)[:, None]
            ratio[xj == 0] = 0.0
            col = ratio.sum(axis=0) / len(X)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        if support_only:
            supp = H[:, j] != 0
            col = np.where(supp, col, 0.0)
        new[:, j] = col
    return finalize_columns(new, H, nonneg)


def mstep_update_b(samples: Sequence[GibbsSample], b_min: float = B_MIN) -> float:
    X, _ = stack(samples)
    return max(float(np.mean(np.abs(X))), b_min)


# -- hyperparameters -------------------------------------------------------------

def inverse_digamma(c: float, tol: float = 1e-10, max_iter: int = 25) -> tuple[float, bool]:
    """Solve psi(a) = c by Newton's method; returns (a, converged)."""
    a = math.exp(c) + 0.5 if c >= -2.22 else -1.0 / (c - special.digamma(1.0))
    for _ in range(max_iter):
        step = (special.digamma(a) - c) / special.polygamma(1, a)
        a_new = a - step
        if a_new <= 0:
            a_new = a / 2
        if abs(a_new - a) <= tol * max(1.0, a):
            return a_new, True
        a = a_new
    return a, abs(special.digamma(a) - c) <= 1e-8


def _solve_gamma_shape(kappa: float, tol: float = 1e-10,
                       max_iter: int = 25) -> tuple[float, bool]:
    """Solve psi(a) - ln a = kappa (kappa < 0) with Newton steps on 1/a."""
    s = -kappa
    a = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)
    for _ in range(max_iter):
        g = special.digamma(a) - math.log(a) - kappa
        gp = special.polygamma(1, a) - 1 / a
        inv = 1 / a + g / (a * a * gp)
        a_new = 1 / inv if inv > 0 else a * 2
        if abs(a_new - a) <= tol * max(1.0, a):
            return a_new, True
        a = a_new
    return a, False


def _hyper_from_moments(mean_log: float, mean_tau: float, alpha0: float,
                        beta0: float) -> tuple[float, float]:
    kappa = mean_log - math.log(mean_tau)
    if kappa < -1e-12:
        a, ok = _solve_gamma_shape(kappa)
        if ok and np.isfinite(a) and a > 0:
            return float(a), float(a / mean_tau)
    else:
        a, ok = inverse_digamma(math.log(beta0) + mean_log)
        if ok and np.isfinite(a) and a > 0:
            return float(a), float(beta0)
    warnings.warn("hyperparameter Newton solve did not converge; keeping previous values",
                  RuntimeWarning, stacklevel=3)
    return alpha0, beta0


def update_hyperparams(taus, alpha0: float, beta0: float) -> tuple[float, float]:
    """Maximize the Monte-Carlo Gamma prior term over (alpha0, beta0).

    Stationarity: psi(alpha0) = ln beta0 + mean ln tau and
    alpha0 / beta0 = mean tau.  When the samples carry no spread
    (all equal, or a single one) no finite joint solution exists; beta0
    is then kept and only the alpha0 equation is solved.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.size == 0 or np.any(taus <= 0) or not np.all(np.isfinite(taus)):
        raise ValueError("tau samples must be positive and finite")
    return _hyper_from_moments(float(np.mean(np.log(taus))), float(np.mean(taus)),
                               alpha0, beta0)


def update_hyperparams_from_stats(scalars: np.ndarray, alpha0: float,
                                  beta0: float) -> tuple[float, float]:
    """Same as :func:`update_hyperparams` from pooled chain sums."""
    cnt = float(scalars[K.S_COUNT])
    return _hyper_from_moments(float(scalars[K.S_LOGTAU]) / cnt, float(scalars[K.S_TAU]) / cnt,
                               alpha0, beta0)


# -- EM driver -------------------------------------------------------------------

def _converged(q_trace: list[float], tol: float) -> bool:
    if len(q_trace) < 2:
        return False
    prev, cur = q_trace[-2], q_trace[-1]
    return abs(cur - prev) <= tol * max(abs(prev), 1e-300)


def em_step(Y: np.ndarray, H: np.ndarray, bvec: np.ndarray, alpha0: float, beta0: float,
            cfg: GibbsConfig, purpose: int, it: int, mode: str) -> tuple[ChainStats, float]:
    """E-step: one chain per day column, pooled statistics and the Monte-Carlo Q."""
    stats = ChainStats(H, mode, cfg.support_only)
    for p in range(Y.shape[1]):
        stats.run(Y[:, p], bvec, alpha0, beta0, cfg, derive_seed(cfg.seed, purpose, it, p))
    q = stats.q_value(Y.shape[0], bvec, alpha0, beta0, cfg.retained)
    if not np.isfinite(q):
        raise FloatingPointError("non-finite Q")
    return stats, q


def check_training_inputs(Y, H) -> tuple[np.ndarray, np.ndarray]:
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    H = np.asarray(H, dtype=float)
    if Y.ndim != 2 or Y.size == 0:
        raise ValueError("empty consumption matrix")
    if Y.shape[0] != H.shape[0]:
        raise ValueError(f"dictionary has {H.shape[0]} rows, data has {Y.shape[0]}")
    if not np.any(np.linalg.norm(H, axis=0) > 0):
        raise ValueError("dictionary has only zero columns")
    _check_finite(Y, H)
    return Y, H


def train_device(
    Y,
    H_init: np.ndarray,
    cfg: GibbsConfig,
    device_id: str = "device",
    b: float = 0.5,
    alpha0: float = 1.0,
    beta0: float = 1.0,
    callback: Callable[[int, float, "DeviceModel"], None] | None = None,
) -> DeviceModel:
    """Monte-Carlo EM for one device: a chain per day, then pooled M-step updates.

    Each iteration updates H and b, then (alpha0, beta0); Q is the
    Monte-Carlo estimate at the parameters that produced the samples.
    """
    Y, H = check_training_inputs(Y, H_init)
    model = DeviceModel(device_id, H.copy(), b, alpha0, beta0)
    for it in range(cfg.em_iters):
        bvec = np.full(model.M, model.b)
        stats, q = em_step(Y, model.H, bvec, model.alpha0, model.beta0, cfg,
                           SEED_DEVICE, it, cfg.h_update)
        model.H = stats.updated_H(cfg.nonneg_coeffs)
        model.b = max(float(stats.scalars[K.S_ABS]) / (stats.count * model.M), B_MIN)
        model.alpha0, model.beta0 = update_hyperparams_from_stats(
            stats.scalars, model.alpha0, model.beta0)
        model.q_trace.append(float(q))
        log.info("device=%s em_iter=%d Q=%r b=%r alpha0=%r beta0=%r", device_id, it + 1,
                 q, model.b, model.alpha0, model.beta0)
        if callback is not None:
            callback(it, q, model)
        if _converged(model.q_trace, cfg.em_tol):
            break
    return model


def posterior_mean_coefficients(Y, H, b, alpha0: float, beta0: float, cfg: GibbsConfig,
                                purpose: int = SEED_DRAW) -> np.ndarray:
    """Mean retained coefficients per day (M x P)."""
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    H = np.asarray(H, dtype=float)
    bvec = np.broadcast_to(np.asarray(b, dtype=float), (H.shape[1],)).copy()
    stats = ChainStats(H, "aggregated", True)
    out = np.zeros((H.shape[1], Y.shape[1]))
    for p in range(Y.shape[1]):
        xs, _ = stats.run(Y[:, p], bvec, alpha0, beta0, cfg,
                          derive_seed(cfg.seed, purpose, p), store=cfg.retained)
        out[:, p] = xs.mean(axis=0)
    return out


def reconstruction_error(Y, H, X) -> float:
    """||Y - H X||_F / ||Y||_F."""
    Y = np.asarray(getattr(Y, "values", Y), dtype=float)
    return float(np.linalg.norm(Y - H @ X) / np.linalg.norm(Y))
