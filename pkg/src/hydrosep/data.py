"""Event ingestion, interval matrices and their CSV formats."""

from __future__ import annotations

import csv
import io
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

N_INTERVALS = 96
DEVICES = ("faucet", "dishwasher", "toilet", "shower", "clothes_washer")
AGGREGATE_ID = "aggregate"

EVENT_COLUMNS = ("day", "device", "start_interval", "duration", "volumes")
_OPTIONAL_COLUMNS = ("event_id",)
_DEVICE_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")
_MATRIX_HEADER_RE = re.compile(
    r"^#hydrosep-matrix v1 device=(?P<device>\S+) N=(?P<n>\d+) P=(?P<p>\d+)$"
)


class EventParseError(ValueError):
    """Malformed events CSV row."""


class EventValidationError(ValueError):
    """Event violating the record invariants (e.g. a negative volume)."""


class MatrixFormatError(ValueError):
    pass


@dataclass(frozen=True)
class EventRecord:
    device_id: str
    day_index: int
    start_interval: int
    volumes: tuple[float, ...]

    @property
    def duration(self) -> int:
        return len(self.volumes)

    @property
    def total(self) -> float:
        return float(sum(self.volumes))


@dataclass
class EventTable:
    records: list[EventRecord] = field(default_factory=list)
    n_intervals: int = N_INTERVALS
    clipped: int = 0
    clipped_volume: float = 0.0
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def devices(self) -> list[str]:
        seen = dict.fromkeys(r.device_id for r in self.records)
        return list(seen)

    def n_days(self) -> int:
        return 1 + max((r.day_index for r in self.records), default=-1)


@dataclass
class ConsumptionMatrix:
    device_id: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("consumption matrix must be 2-D (N x P)")
        if np.any(self.values < 0):
            raise ValueError(f"{self.device_id}: negative consumption")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]

    def select_days(self, days: Sequence[int]) -> "ConsumptionMatrix":
        return ConsumptionMatrix(self.device_id, self.values[:, list(days)])


@dataclass
class AggregateMatrix:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def P(self) -> int:
        return self.values.shape[1]

    def select_days(self, days: Sequence[int]) -> "AggregateMatrix":
        return AggregateMatrix(self.values[:, list(days)])


def make_record(
    device_id: str,
    day_index: int,
    start_interval: int,
    volumes: Iterable[float],
    n_intervals: int = N_INTERVALS,
) -> tuple[EventRecord | None, float]:
    """Validate one event and clip it at the end of the day.

    Returns the record (``None`` when nothing positive survives clipping)
    and the clipped volume.
    """
    vols = [float(v) for v in volumes]
    if not vols:
        raise EventValidationError("event has no volumes")
    if any(not np.isfinite(v) for v in vols):
        raise EventValidationError("non-finite volume")
    if any(v < 0 for v in vols):
        raise EventValidationError(f"negative volume in {vols}")
    if not any(v > 0 for v in vols):
        raise EventValidationError("event has no positive volume")
    if day_index < 0:
        raise EventValidationError(f"negative day index {day_index}")
    if not 0 <= start_interval < n_intervals:
        raise EventValidationError(
            f"start interval {start_interval} outside [0, {n_intervals})"
        )
    room = n_intervals - start_interval
    kept, cut = vols[:room], vols[room:]
    clipped = float(sum(cut))
    if not any(v > 0 for v in kept):
        return None, clipped
    return EventRecord(device_id, int(day_index), int(start_interval), tuple(kept)), clipped


def _parse_int(text: str, name: str, lineno: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise EventParseError(f"line {lineno}: bad {name} {text!r}") from None


def parse_events(path: str | Path, n_intervals: int = N_INTERVALS) -> EventTable:
    """Read an events CSV.

    The header must contain ``day,device,start_interval,duration,volumes``
    (an ``event_id`` column is tolerated and ignored). ``volumes`` holds
    ``duration`` ``;``-separated per-interval values. Events running past
    the last interval are clipped and counted.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_events_text(text, n_intervals)


def parse_events_text(text: str, n_intervals: int = N_INTERVALS) -> EventTable:
    table = EventTable(n_intervals=n_intervals)
    reader = csv.reader(io.StringIO(text))
    header = None
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if header is None:
            header = [c.strip() for c in row]
            missing = [c for c in EVENT_COLUMNS if c not in header]
            unknown = [c for c in header if c not in EVENT_COLUMNS + _OPTIONAL_COLUMNS]
            if missing or unknown:
                raise EventParseError(
                    f"line {lineno}: bad header {row} (missing={missing}, unknown={unknown})"
                )
            continue
        if len(row) != len(header):
            raise EventParseError(
                f"line {lineno}: expected {len(header)} fields, got {len(row)}"
            )
        rec = dict(zip(header, (c.strip() for c in row)))
        device = rec["device"]
        if not _DEVICE_RE.match(device):
            raise EventParseError(f"line {lineno}: bad device id {device!r}")
        day = _parse_int(rec["day"], "day", lineno)
        start = _parse_int(rec["start_interval"], "start_interval", lineno)
        duration = _parse_int(rec["duration"], "duration", lineno)
        try:
            vols = [float(v) for v in rec["volumes"].split(";")]
        except ValueError:
            raise EventParseError(f"line {lineno}: bad volumes {rec['volumes']!r}") from None
        if duration != len(vols):
            raise EventParseError(
                f"line {lineno}: duration {duration} != {len(vols)} volumes"
            )
        try:
            record, clipped = make_record(device, day, start, vols, n_intervals)
        except EventValidationError as exc:
            raise EventValidationError(f"line {lineno}: {exc}") from None
        if clipped > 0 or record is None:
            table.clipped += 1
            table.clipped_volume += clipped
        if record is None:
            table.dropped += 1
            continue
        table.records.append(record)
    if table.clipped:
        log.warning("clipped=%d clipped_volume=%r dropped=%d", table.clipped,
                    table.clipped_volume, table.dropped)
    return table


def format_events(table: EventTable) -> str:
    buf = io.StringIO()
    buf.write(",".join(EVENT_COLUMNS) + "\n")
    for r in table.records:
        vols = ";".join(repr(float(v)) for v in r.volumes)
        buf.write(f"{r.day_index},{r.device_id},{r.start_interval},{r.duration},{vols}\n")
    return buf.getvalue()


def write_events(table: EventTable, path: str | Path) -> None:
    Path(path).write_text(format_events(table), encoding="utf-8", newline="\n")


def events_to_matrix(
    events: EventTable, device: str, days: int, n_intervals: int | None = None
) -> ConsumptionMatrix:
    """Place every event of ``device`` into an N x days matrix.

    Overlapping events of the same device add up.
    """
    n = events.n_intervals if n_intervals is None else n_intervals
    known = set(DEVICES) | set(events.devices())
    if device not in known:
        raise KeyError(f"unknown device id {device!r}")
    Y = np.zeros((n, days))
    for r in events.records:
        if r.device_id != device:
            continue
        if r.day_index >= days:
            raise ValueError(f"event on day {r.day_index} but only {days} days requested")
        end = r.start_interval + r.duration
        if end > n:
            raise ValueError("event exceeds the day; clip at ingestion")
        Y[r.start_interval:end, r.day_index] += r.volumes
    return ConsumptionMatrix(device, Y)


def aggregate(matrices: Sequence[ConsumptionMatrix | np.ndarray]) -> AggregateMatrix:
    if not matrices:
        raise ValueError("nothing to aggregate")
    arrays = [m.values if isinstance(m, ConsumptionMatrix) else np.asarray(m, float)
              for m in matrices]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch: {a.shape} vs {shape}")
    total = np.zeros(shape)
    for a in arrays:
        total += a
    return AggregateMatrix(total)


def maximal_runs(column: np.ndarray) -> list[tuple[int, int]]:
    """(start, length) of every maximal run of strictly positive entries."""
    pos = np.asarray(column) > 0
    if not pos.any():
        return []
    padded = np.concatenate(([False], pos, [False])).astype(np.int8)
    d = np.diff(padded)
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return [(int(s), int(e - s)) for s, e in zip(starts, ends)]


# -- matrix CSV -------------------------------------------------------------

def format_matrix(values: np.ndarray, device: str) -> str:
    values = np.asarray(values, dtype=float)
    n, p = values.shape
    lines = [f"#hydrosep-matrix v1 device={device} N={n} P={p}"]
    for row in values:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_matrix(matrix: ConsumptionMatrix | AggregateMatrix, path: str | Path,
                 device: str | None = None) -> None:
    if device is None:
        device = getattr(matrix, "device_id", AGGREGATE_ID)
    Path(path).write_text(format_matrix(matrix.values, device), encoding="utf-8",
                          newline="\n")


def read_matrix(path: str | Path) -> ConsumptionMatrix | AggregateMatrix:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise MatrixFormatError(f"{path}: empty file")
    m = _MATRIX_HEADER_RE.match(lines[0].strip())
    if m is None:
        raise MatrixFormatError(f"{path}: bad header {lines[0]!r}")
    device, n, p = m["device"], int(m["n"]), int(m["p"])
    rows = [ln for ln in lines[1:] if ln.strip()]
    if len(rows) != n:
        raise MatrixFormatError(f"{path}: expected {n} rows, found {len(rows)}")
    values = np.zeros((n, p))
    for i, ln in enumerate(rows):
        parts = ln.split(",") if p else []
        if len(parts) != p:
            raise MatrixFormatError(f"{path}: row {i} has {len(parts)} values, expected {p}")
        try:
            values[i] = [float(x) for x in parts]
        except ValueError:
            raise MatrixFormatError(f"{path}: row {i} not numeric") from None
    if device == AGGREGATE_ID:
        return AggregateMatrix(values)
    return ConsumptionMatrix(device, values)
