"""Command-line interface: synth, ingest, shapes, train, train-agg, disagg, eval."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import data as dc
from . import experiment as ex
from . import persist, shapes, syngen
from .discriminative import build_aggregate, train_discriminative
from .inference import GibbsConfig, derive_seed
from .metrics import evaluate, mean_std
from .predictor import disaggregate

log = logging.getLogger("hydrosep")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_SHAPE, EXIT_NUMERIC = 0, 2, 3, 4, 5
MODEL_NAME = "model" + persist.MODEL_SUFFIX


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    seed: int = 0
    data_dir: str = "."
    out_dir: str = "."
    model: str | None = None
    events: str | None = None
    truth_dir: str | None = None
    est_dir: str | None = None
    devices: list[str] = field(default_factory=lambda: list(dc.DEVICES))
    days: int | None = None
    n_intervals: int = dc.N_INTERVALS
    gibbs_samples: int = 500
    burn_in: int = 100
    em_iters: int = 15
    agg_em_iters: int | None = None
    em_tol: float = 1e-3
    folds: int | None = None
    allow_negative_coeffs: bool = False
    h_update: str = "aggregated"
    placement: str = "observed"
    max_span: int = 2
    max_smoothed: int | None = 50

    def gibbs(self) -> GibbsConfig:
        return GibbsConfig(T=self.gibbs_samples, s=self.burn_in, seed=self.seed,
                           nonneg_coeffs=not self.allow_negative_coeffs,
                           em_iters=self.em_iters, em_tol=self.em_tol,
                           h_update=self.h_update)

    def pipeline(self) -> ex.PipelineConfig:
        return ex.PipelineConfig(gibbs=self.gibbs(), agg_em_iters=self.agg_em_iters,
                                 max_span=self.max_span, placement=self.placement,
                                 max_smoothed=self.max_smoothed)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, value):
    if isinstance(value, str) is False:
        return value
    kind = _FIELD_TYPES[key]
    text = value.strip()
    if "list" in kind:
        return [v.strip() for v in text.split(",") if v.strip()]
    if kind == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise CliError(EXIT_USAGE, f"{key}: expected a boolean, got {value!r}")
    if "None" in kind and text.lower() in ("", "none"):
        return None
    try:
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
    except ValueError:
        raise CliError(EXIT_USAGE, f"{key}: bad value {value!r}") from None
    return text


def read_config_file(path: str) -> dict:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    p = Path(path)
    if not p.is_file():
        raise CliError(EXIT_INPUT, f"config file not found: {path}")
    out = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(EXIT_USAGE, f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise CliError(EXIT_USAGE, f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Flag > config file > built-in default."""
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in _FIELD_TYPES:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _convert(key, v)
    cfg = RunConfig(**values)
    if cfg.days is not None and cfg.days < 1:
        raise CliError(EXIT_USAGE, "--days must be >= 1")
    if cfg.folds is not None and cfg.folds < 2:
        raise CliError(EXIT_USAGE, "--folds must be >= 2")
    if not 0 <= cfg.burn_in < cfg.gibbs_samples:
        raise CliError(EXIT_USAGE, "need 0 <= burn-in < gibbs-samples")
    if cfg.em_iters < 0:
        raise CliError(EXIT_USAGE, "--em-iters must be >= 0")
    return cfg


# -- file helpers ----------------------------------------------------------------

def matrix_path(directory: str, device: str) -> Path:
    return Path(directory) / f"{device}.csv"


def _read_matrix(path: Path, what: str) -> np.ndarray:
    if not path.is_file():
        raise CliError(EXIT_INPUT, f"missing {what}: {path}")
    try:
        m = dc.read_matrix(path)
    except dc.MatrixFormatError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from None
    if m.values.size == 0:
        raise CliError(EXIT_INPUT, f"empty {what}: {path}")
    return m.values


def read_device_matrices(directory: str, devices: Sequence[str],
                         require_nonzero: bool = True) -> dict[str, np.ndarray]:
    out = {}
    for dev in devices:
        Y = _read_matrix(matrix_path(directory, dev), f"data for device {dev}")
        if require_nonzero and not np.any(Y > 0):
            raise CliError(EXIT_INPUT, f"device {dev} has no consumption")
        out[dev] = Y
    shapes_seen = {Y.shape for Y in out.values()}
    if len(shapes_seen) > 1:
        raise CliError(EXIT_SHAPE, f"device matrices differ in shape: {sorted(shapes_seen)}")
    return out


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")


def _load_model(cfg: RunConfig) -> persist.ModelFile:
    path = Path(cfg.model or Path(cfg.out_dir) / MODEL_NAME)
    if not path.is_file():
        raise CliError(EXIT_INPUT, f"missing model file: {path}")
    try:
        return persist.load_model(path)
    except persist.ModelVersionError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from None
    except persist.CorruptModelError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from None


# -- commands --------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> None:
    if cfg.days is None:
        raise CliError(EXIT_USAGE, "synth needs --days")
    n = cfg.n_intervals
    if cfg.events:
        table = _parse_events(cfg.events, n)
        freq = syngen.fit_frequency_model(table, devices=cfg.devices)
        pools = syngen.build_event_dictionary(table)
    else:
        freq = syngen.default_frequency_model(
            n, {d: syngen.DEFAULT_LAMBDA[d] for d in cfg.devices})
        pools = syngen.default_event_dictionary()
    gen = syngen.generate_days(cfg.days, freq, pools, derive_seed(cfg.seed, 0x5E7),
                               cfg.devices, n)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dc.write_events(gen.events, out / "events.csv")
    for dev, m in gen.matrices.items():
        dc.write_matrix(m, matrix_path(cfg.out_dir, dev))
    dc.write_matrix(gen.aggregate, matrix_path(cfg.out_dir, dc.AGGREGATE_ID))
    write_text(out / "frequency.csv", syngen.frequency_table_csv(freq))
    log.info("days=%d events=%d clipped=%d clipped_volume=%r", cfg.days, len(gen.events),
             gen.events.clipped, gen.clipped_volume)
    print("device,lambda,empirical_mean")
    for dev in cfg.devices:
        print(f"{dev},{freq.lambda_daily[dev]!r},{float(gen.daily_counts[dev].mean())!r}")


def _parse_events(path: str, n: int) -> dc.EventTable:
    if not Path(path).is_file():
        raise CliError(EXIT_INPUT, f"missing events file: {path}")
    try:
        return dc.parse_events(path, n)
    except (dc.EventParseError, dc.EventValidationError) as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from None


def cmd_ingest(cfg: RunConfig) -> None:
    if not cfg.events:
        raise CliError(EXIT_USAGE, "ingest needs --events")
    table = _parse_events(cfg.events, cfg.n_intervals)
    if not len(table):
        raise CliError(EXIT_INPUT, f"no events in {cfg.events}")
    days = table.n_days() if cfg.days is None else cfg.days
    devices = [d for d in cfg.devices if d in table.devices()] or table.devices()
    try:
        mats = [dc.events_to_matrix(table, dev, days) for dev in devices]
    except ValueError as exc:
        raise CliError(EXIT_SHAPE, str(exc)) from None
    for m in mats:
        dc.write_matrix(m, matrix_path(cfg.out_dir, m.device_id))
    dc.write_matrix(dc.aggregate(mats), matrix_path(cfg.out_dir, dc.AGGREGATE_ID))
    log.info("events=%d days=%d devices=%s clipped=%d", len(table), days, ",".join(devices),
             table.clipped)


def cmd_shapes(cfg: RunConfig) -> None:
    mats = read_device_matrices(cfg.data_dir, cfg.devices)
    out = Path(cfg.out_dir)
    for dev, Y in mats.items():
        summary = shapes.discover(Y, cfg.max_span, max_smoothed=cfg.max_smoothed)
        lines = ["pattern_bits,count"]
        lines += ["".join(map(str, p)) + f",{c}" for p, c in summary.counts]
        write_text(out / f"{dev}_patterns.csv", "\n".join(lines) + "\n")
        write_text(out / f"{dev}_span.csv",
                   "span\n" + "".join(f"{s}\n" for s in sorted(summary.span)))
        B = summary.smoothed.bases
        write_text(out / f"{dev}_smoothed.csv",
                   dc.format_matrix(B.T if B.size else np.zeros((Y.shape[0], 0)), dev))
        log.info("device=%s span=%s patterns=%d smoothed=%d pruned=%d", dev,
                 ",".join(map(str, sorted(summary.span))), len(summary.patterns),
                 B.shape[0], summary.smoothed.n_pruned)


def cmd_train(cfg: RunConfig) -> None:
    mats = read_device_matrices(cfg.data_dir, cfg.devices)
    models = ex.train_devices(mats, cfg.pipeline())
    path = Path(cfg.model or Path(cfg.out_dir) / MODEL_NAME)
    path.parent.mkdir(parents=True, exist_ok=True)
    persist.save_model(persist.ModelFile(models), path)
    for m in models:
        log.info("device=%s M=%d q_final=%r", m.device_id, m.M, m.q_trace[-1] if m.q_trace
                 else float("nan"))


def _check_n(n_model: int, Y: np.ndarray, what: str) -> None:
    if Y.shape[0] != n_model:
        raise CliError(EXIT_SHAPE, f"{what} has {Y.shape[0]} intervals, model has {n_model}")


def cmd_train_agg(cfg: RunConfig) -> None:
    mf = _load_model(cfg)
    if not mf.devices:
        raise CliError(EXIT_INPUT, "model file has no per-device models")
    Y_bar = _read_matrix(matrix_path(cfg.data_dir, dc.AGGREGATE_ID), "aggregate data")
    agg0 = build_aggregate(mf.devices)
    _check_n(agg0.N, Y_bar, "aggregate data")
    gcfg = cfg.gibbs()
    if cfg.agg_em_iters is not None:
        gcfg = replace(gcfg, em_iters=cfg.agg_em_iters)
    agg = train_discriminative(Y_bar, agg0, gcfg)
    frozen = agg.b_per_device == [m.b for m in mf.devices]
    log.info("frozen_b_equal=%s", frozen)
    if cfg.truth_dir:
        truth = read_device_matrices(cfg.truth_dir, agg.devices, require_nonzero=False)
        tl = [truth[d] for d in agg.devices]
        before = evaluate(tl, disaggregate(Y_bar, agg0, cfg.gibbs()).estimates, Y_bar,
                          agg.devices).nde
        after = evaluate(tl, disaggregate(Y_bar, agg, cfg.gibbs()).estimates, Y_bar,
                         agg.devices).nde
        log.info("nde_before=%r nde_after=%r", before, after)
    mf.compound = agg
    persist.save_model(mf, Path(cfg.model or Path(cfg.out_dir) / MODEL_NAME))


def cmd_disagg(cfg: RunConfig) -> None:
    mf = _load_model(cfg)
    if mf.compound is None:
        raise CliError(EXIT_INPUT, "model file has no compound section; run train-agg")
    agg = mf.compound
    Y_bar = _read_matrix(matrix_path(cfg.data_dir, dc.AGGREGATE_ID), "aggregate data")
    _check_n(agg.N, Y_bar, "aggregate data")
    res = disaggregate(Y_bar, agg, cfg.gibbs())
    out = Path(cfg.out_dir)
    for dev, est in zip(res.devices, res.estimates):
        write_text(out / f"estimate_{dev}.csv", dc.format_matrix(est, dev))
    lines = ["day,log_pred_density"] + [f"{p},{v!r}" for p, v in
                                        enumerate(res.log_predictive_density)]
    write_text(out / "scores.csv", "\n".join(lines) + "\n")
    log.info("days=%d devices=%d samples_used=%d", Y_bar.shape[1], len(res.devices),
             res.samples_used)


def cmd_eval(cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    if cfg.folds:
        data = read_device_matrices(cfg.data_dir, cfg.devices, require_nonzero=False)
        reports = ex.cross_validate(data, cfg.folds, cfg.pipeline())
        lines = ["metric,device,mean,std"]
        lines += [f"{m},{d},{mu!r},{sd!r}" for m, d, mu, sd in mean_std(reports)]
        write_text(out / "cv_report.csv", "\n".join(lines) + "\n")
        for f, r in enumerate(reports):
            write_text(out / f"fold_{f}_report.csv", r.to_csv())
        return
    truth_dir = cfg.truth_dir or cfg.data_dir
    est_dir = cfg.est_dir or cfg.out_dir
    truth = read_device_matrices(truth_dir, cfg.devices, require_nonzero=False)
    est = {}
    for dev in cfg.devices:
        est[dev] = _read_matrix(Path(est_dir) / f"estimate_{dev}.csv", f"estimate for {dev}")
        if est[dev].shape != truth[dev].shape:
            raise CliError(EXIT_SHAPE, f"{dev}: estimate shape {est[dev].shape} vs truth "
                                       f"{truth[dev].shape}")
    agg_path = matrix_path(truth_dir, dc.AGGREGATE_ID)
    Y_bar = _read_matrix(agg_path, "aggregate data") if agg_path.is_file() \
        else sum(truth.values())
    report = evaluate([truth[d] for d in cfg.devices], [est[d] for d in cfg.devices], Y_bar,
                      cfg.devices)
    write_text(out / "report.csv", report.to_csv())
    log.info("accuracy=%r nde=%r avg_f=%r nde_skipped=%d", report.accuracy, report.nde,
             report.avg_f, report.nde_skipped)


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "shapes": cmd_shapes, "train": cmd_train,
    "train-agg": cmd_train_agg, "disagg": cmd_disagg, "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    a = common.add_argument
    a("--seed", type=int)
    a("--config", help="key = value file; flags override it")
    a("--data-dir", help="directory with <device>.csv and aggregate.csv matrices")
    a("--out-dir")
    a("--model", help="model file (default: <out-dir>/" + MODEL_NAME + ")")
    a("--events", help="events CSV")
    a("--truth-dir")
    a("--est-dir")
    a("--devices", help="comma-separated device ids")
    a("--days", type=int)
    a("--n-intervals", type=int)
    a("--gibbs-samples", "-T", dest="gibbs_samples", type=int)
    a("--burn-in", "-s", dest="burn_in", type=int)
    a("--em-iters", type=int)
    a("--agg-em-iters", type=int)
    a("--em-tol", type=float)
    a("--folds", type=int)
    a("--allow-negative-coeffs", action="store_const", const=True)
    a("--h-update", choices=("aggregated", "paper-literal"))
    a("--placement", choices=("observed", "all"))
    a("--max-span", type=int)
    a("--max-smoothed", type=int)
    a("--log-level", default="INFO")
    parser = argparse.ArgumentParser(prog="hydrosep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


class _KeyValueFormatter(logging.Formatter):
    def format(self, record):
        return f"level={record.levelname.lower()} logger={record.name} {record.getMessage()}"


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_KeyValueFormatter())
    root = logging.getLogger("hydrosep")
    root.handlers[:] = [handler]
    root.setLevel(args.log_level.upper())
    root.propagate = False
    try:
        cfg = resolve_config(args)
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            COMMANDS[args.command](cfg)
    except CliError as exc:
        log.error("exit=%d message=%r", exc.code, str(exc))
        return exc.code
    except (FloatingPointError, np.linalg.LinAlgError, OverflowError) as exc:
        log.error("exit=%d message=%r", EXIT_NUMERIC, str(exc))
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("exit=%d message=%r", EXIT_SHAPE, str(exc))
        return EXIT_SHAPE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
