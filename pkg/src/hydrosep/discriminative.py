"""Compound dictionary over all devices, retrained on aggregate data with priors frozen."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import inference as inf
from .inference import DeviceModel, GibbsConfig, GibbsSample

log = logging.getLogger(__name__)


@dataclass
class AggregateModel:
    H_bar: np.ndarray
    devices: list[str]
    block_sizes: list[int]
    b_per_device: list[float]
    alpha0_bar: float = 1.0
    beta0_bar: float = 1.0
    q_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.H_bar = np.asarray(self.H_bar, dtype=float)
        if sum(self.block_sizes) != self.H_bar.shape[1]:
            raise ValueError("block widths do not sum to the number of columns")
        if not (len(self.devices) == len(self.block_sizes) == len(self.b_per_device)):
            raise ValueError("devices, block sizes and b values differ in length")
        if not all(b > 0 for b in self.b_per_device):
            raise ValueError("Laplace scales must be positive")

    @property
    def N(self) -> int:
        return self.H_bar.shape[0]

    @property
    def M_bar(self) -> int:
        return self.H_bar.shape[1]

    @property
    def block_map(self) -> list[int]:
        """1-based device block of every column."""
        return [d + 1 for d, m in enumerate(self.block_sizes) for _ in range(m)]

    def block(self, d: int) -> slice:
        start = sum(self.block_sizes[:d])
        return slice(start, start + self.block_sizes[d])

    def b_vector(self) -> np.ndarray:
        return np.repeat(np.asarray(self.b_per_device, dtype=float), self.block_sizes)


def block_of_column(j: int, M: int) -> int:
    """Device block (1-based) of 1-based column ``j`` for equal block width ``M``."""
    return -(-j // M)


def build_aggregate(models: Sequence[DeviceModel]) -> AggregateModel:
    if not models:
        raise ValueError("no device models")
    n = models[0].N
    for m in models:
        if m.N != n:
            raise ValueError(f"device {m.device_id} has N={m.N}, expected {n}")
    return AggregateModel(
        H_bar=np.hstack([m.H for m in models]),
        devices=[m.device_id for m in models],
        block_sizes=[m.M for m in models],
        b_per_device=[m.b for m in models],
    )


def gibbs_chain_aggregate(y_bar, agg: AggregateModel, cfg: GibbsConfig,
                          seed: int | None = None) -> list[GibbsSample]:
    return inf.gibbs_chain(y_bar, agg.H_bar, agg.b_vector(), agg.alpha0_bar, agg.beta0_bar,
                           cfg, seed)


def train_discriminative(Y_bar, agg: AggregateModel, cfg: GibbsConfig,
                         callback=None) -> AggregateModel:
    """Monte-Carlo EM on aggregate days updating only the compound dictionary
    and the aggregate noise hyperparameters; device Laplace scales stay fixed."""
    if cfg.em_iters == 0:
        return agg
    Y, H = inf.check_training_inputs(Y_bar, agg.H_bar)
    mode = "aggregated" if cfg.h_update == "aggregated" else "paper-literal-aggregate"
    out = AggregateModel(H.copy(), list(agg.devices), list(agg.block_sizes),
                         list(agg.b_per_device), agg.alpha0_bar, agg.beta0_bar,
                         list(agg.q_trace))
    bvec = out.b_vector()
    for it in range(cfg.em_iters):
        stats, q = inf.em_step(Y, out.H_bar, bvec, out.alpha0_bar, out.beta0_bar, cfg,
                               inf.SEED_AGGREGATE, it, mode)
        out.H_bar = stats.updated_H(cfg.nonneg_coeffs)
        out.alpha0_bar, out.beta0_bar = inf.update_hyperparams_from_stats(
            stats.scalars, out.alpha0_bar, out.beta0_bar)
        out.q_trace.append(float(q))
        log.info("aggregate em_iter=%d Q=%r alpha0=%r beta0=%r", it + 1, q,
                 out.alpha0_bar, out.beta0_bar)
        if callback is not None:
            callback(it, q, out)
        if inf._converged(out.q_trace[len(agg.q_trace):], cfg.em_tol):
            break
    return out
