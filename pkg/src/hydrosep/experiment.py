"""Train / disaggregate / evaluate pipeline and k-fold cross-validation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import shapes
from .discriminative import AggregateModel, build_aggregate, train_discriminative
from .inference import DeviceModel, GibbsConfig, derive_seed, train_device
from .metrics import EvalReport, evaluate
from .predictor import DisaggregationResult, disaggregate

log = logging.getLogger(__name__)

INIT_MODES = ("shape", "random")


@dataclass(frozen=True)
class PipelineConfig:
    gibbs: GibbsConfig = field(default_factory=GibbsConfig)
    # EM iterations for the discriminative stage (None: same as per-device)
    agg_em_iters: int | None = None
    init: str = "shape"
    # short windows keep per-interval column overlap low
    max_span: int = 2
    placement: str = "observed"
    combinations: str = "contiguous"
    max_smoothed: int | None = 50
    # columns per device for random init (None: match the shape dictionary)
    random_columns: int | None = None

    def __post_init__(self):
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")


def fold_split(P: int, k: int, seed: int) -> list[np.ndarray]:
    """Shuffle day indices with the seed and cut them into k contiguous groups."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if P < k:
        raise ValueError(f"{P} days cannot be split into {k} folds")
    rng = np.random.default_rng(derive_seed(seed, 0xF01D))
    return [np.sort(g) for g in np.array_split(rng.permutation(P), k)]


def initial_dictionary(Y: np.ndarray, cfg: PipelineConfig, seed: int,
                       device_index: int) -> tuple[np.ndarray, tuple[int, ...]]:
    H, summary = shapes.shape_dictionary(Y, cfg.max_span, cfg.placement, cfg.combinations,
                                         max_smoothed=cfg.max_smoothed)
    span = tuple(sorted(summary.span))
    if cfg.init == "random":
        M = H.shape[1] if cfg.random_columns is None else cfg.random_columns
        rng = np.random.default_rng(derive_seed(seed, 0xD1C7, device_index))
        H = shapes.random_dictionary(Y.shape[0], M, rng)
    return H, span


def train_devices(train: Mapping[str, np.ndarray], cfg: PipelineConfig) -> list[DeviceModel]:
    models = []
    for d, (dev, Y) in enumerate(train.items()):
        H0, span = initial_dictionary(Y, cfg, cfg.gibbs.seed, d)
        gcfg = replace(cfg.gibbs, seed=derive_seed(cfg.gibbs.seed, d))
        model = train_device(Y, H0, gcfg, dev)
        model.span = span
        log.info("trained device=%s M=%d b=%r", dev, model.M, model.b)
        models.append(model)
    return models


def train_compound(models: Sequence[DeviceModel], Y_bar: np.ndarray,
                   cfg: PipelineConfig) -> AggregateModel:
    agg = build_aggregate(models)
    gcfg = cfg.gibbs
    if cfg.agg_em_iters is not None:
        gcfg = replace(gcfg, em_iters=cfg.agg_em_iters)
    return train_discriminative(Y_bar, agg, gcfg)


@dataclass
class FoldResult:
    report: EvalReport
    models: list[DeviceModel]
    agg: AggregateModel
    result: DisaggregationResult


def run_fold(data: Mapping[str, np.ndarray], train_days, test_days,
             cfg: PipelineConfig) -> FoldResult:
    """Train on ``train_days`` and score disaggregation of ``test_days``."""
    devices = list(data)
    train = {d: np.asarray(data[d])[:, train_days] for d in devices}
    test = [np.asarray(data[d])[:, test_days] for d in devices]
    models = train_devices(train, cfg)
    Y_bar = sum(train.values())
    agg = train_compound(models, Y_bar, cfg)
    test_bar = sum(test)
    res = disaggregate(test_bar, agg, cfg.gibbs)
    report = evaluate(test, res.estimates, test_bar, devices)
    return FoldResult(report, models, agg, res)


def cross_validate(data: Mapping[str, np.ndarray], k: int, cfg: PipelineConfig,
                   folds: Sequence[int] | None = None) -> list[EvalReport]:
    P = next(iter(data.values())).shape[1]
    groups = fold_split(P, k, cfg.gibbs.seed)
    reports = []
    for f in range(k) if folds is None else folds:
        test = groups[f]
        train = np.sort(np.concatenate([g for i, g in enumerate(groups) if i != f]))
        fold_cfg = replace(cfg, gibbs=replace(cfg.gibbs, seed=derive_seed(cfg.gibbs.seed, f)))
        rep = run_fold(data, train, test, fold_cfg).report
        log.info("fold=%d accuracy=%r nde=%r avg_f=%r", f, rep.accuracy, rep.nde, rep.avg_f)
        reports.append(rep)
    return reports
