"""Per-device estimates from aggregate days, with a Monte-Carlo predictive density score."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from . import inference as inf
from .discriminative import AggregateModel
from .inference import GibbsConfig

_LOG_2PI = math.log(2 * math.pi)


@dataclass
class DisaggregationResult:
    devices: list[str]
    estimates: list[np.ndarray]  # one N x P matrix per device
    log_predictive_density: np.ndarray  # one value per day
    samples_used: int
    mean_coefficients: np.ndarray  # M_bar x P

    def estimate(self, device: str) -> np.ndarray:
        return self.estimates[self.devices.index(device)]


def log_predictive_density(estimates: Sequence[np.ndarray], X: np.ndarray, taus: np.ndarray,
                           agg: AggregateModel) -> float:
    """log (1/S) sum_t prod_d prod_i N(est_i^(d) | (H^(d) x^(d,t))_i, 1/tau_t) for one day.

    ``estimates`` holds one length-N vector per device, ``X`` the S x M_bar
    retained coefficients and ``taus`` their precisions.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    taus = np.asarray(taus, dtype=float)
    if len(taus) == 0:
        raise ValueError("no samples")
    sq = np.zeros(len(taus))
    for d, est in enumerate(estimates):
        blk = agg.block(d)
        means = X[:, blk] @ agg.H_bar[:, blk].T  # S x N
        sq += ((np.asarray(est, dtype=float)[None, :] - means) ** 2).sum(axis=1)
    n_terms = len(estimates) * agg.N
    per_sample = 0.5 * n_terms * (np.log(taus) - _LOG_2PI) - 0.5 * taus * sq
    return float(logsumexp(per_sample) - math.log(len(taus)))


def disaggregate(Y_bar, agg: AggregateModel, cfg: GibbsConfig) -> DisaggregationResult:
    """Posterior-mean reconstruction of every device block, one chain per day."""
    Y = np.asarray(getattr(Y_bar, "values", Y_bar), dtype=float)
    if agg.M_bar == 0 or not np.any(np.linalg.norm(agg.H_bar, axis=0) > 0):
        raise ValueError("empty aggregate model")
    if Y.ndim != 2 or Y.shape[0] != agg.N:
        raise ValueError(f"data has {Y.shape[0]} intervals, model expects {agg.N}")
    D, P = len(agg.devices), Y.shape[1]
    stats = inf.ChainStats(agg.H_bar, "aggregated", True)
    bvec = agg.b_vector()
    est = [np.zeros((agg.N, P)) for _ in range(D)]
    xbar = np.zeros((agg.M_bar, P))
    lpd = np.zeros(P)
    for p in range(P):
        X, taus = stats.run(Y[:, p], bvec, agg.alpha0_bar, agg.beta0_bar, cfg,
                            inf.derive_seed(cfg.seed, inf.SEED_DISAGG, p),
                            store=cfg.retained)
        xbar[:, p] = X.mean(axis=0)
        day_est = []
        for d in range(D):
            blk = agg.block(d)
            v = agg.H_bar[:, blk] @ xbar[blk, p]
            est[d][:, p] = v
            day_est.append(v)
        lpd[p] = log_predictive_density(day_est, X, taus, agg)
    return DisaggregationResult(list(agg.devices), est, lpd, cfg.retained, xbar)
