"""Shape features, cover pruning and dictionary initialization.

A device's consumption windows are reduced to binary up/down patterns
(first-order relations). Patterns are placed at observed start intervals
and combined with normalized raw windows ("smoothed" bases) whose
redundant members, those covered by a larger basis, are pruned.
"""

from __future__ import annotations

import logging
import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .data import maximal_runs

log = logging.getLogger(__name__)

COVER_TOL = 1e-6
DEFAULT_MAX_SPAN = 4
DEFAULT_BUDGET = 200_000
NORM_TOL = 1e-9


class CombinationBudgetError(RuntimeError):
    pass


def _as_array(Y) -> np.ndarray:
    return np.asarray(getattr(Y, "values", Y), dtype=float)


def infer_span(Y, max_span: int = DEFAULT_MAX_SPAN) -> frozenset[int]:
    """Lengths of maximal nonzero runs in the columns of ``Y``, capped at ``max_span``."""
    Y = _as_array(Y)
    if not np.any(Y > 0):
        raise ValueError("cannot infer a span from an all-zero matrix")
    lengths = {length for col in Y.T for _, length in maximal_runs(col)}
    span = frozenset(L for L in lengths if 1 <= L <= max_span)
    if not span:
        raise ValueError(
            f"every run is longer than max_span={max_span}; raise max_span"
        )
    return span


def first_order_relation(v: Sequence[float]) -> tuple[int, ...]:
    v = [float(x) for x in v]
    if not v:
        raise ValueError("first-order relation of an empty vector")
    T = len(v)
    if T == 1:
        return (1,)
    vmax = max(v)
    if v[0] > v[1] or (v[0] == v[1] == vmax):
        out = [1]
    else:
        out = [0]
    for t in range(1, T):
        if v[t] > v[t - 1]:
            out.append(1)
        elif v[t] < v[t - 1]:
            out.append(0)
        else:
            out.append(out[-1])
    return tuple(out)


def _day_windows(col: np.ndarray, span: Iterable[int],
                 combinations: str) -> Iterator[tuple[int, ...]]:
    """Index tuples of the value combinations of one day.

    ``contiguous`` takes windows inside maximal nonzero runs (start-major,
    then length); ``all`` takes every order-preserving subsequence of the
    day's nonzero positions.
    """
    lengths = sorted(span)
    if combinations == "contiguous":
        for start, run_len in maximal_runs(col):
            for s in range(start, start + run_len):
                for r in lengths:
                    if s + r <= start + run_len:
                        yield tuple(range(s, s + r))
    elif combinations == "all":
        nz = np.flatnonzero(col > 0).tolist()
        found = []
        for r in lengths:
            found.extend(itertools.combinations(nz, r))
        found.sort(key=lambda c: (c[0], len(c), c))
        yield from found
    else:
        raise ValueError(f"unknown combination policy {combinations!r}")


def count_combinations(Y, span: Iterable[int], combinations: str = "contiguous") -> int:
    from math import comb

    Y = _as_array(Y)
    lengths = sorted(span)
    total = 0
    for col in Y.T:
        if combinations == "contiguous":
            for _, run_len in maximal_runs(col):
                total += sum(run_len - r + 1 for r in lengths if r <= run_len)
        else:
            k = int(np.count_nonzero(col > 0))
            total += sum(comb(k, r) for r in lengths)
    return total


def consumption_mapping(Y, span: Iterable[int],
                        combinations: str = "contiguous") -> list[tuple[int, ...]]:
    Y = _as_array(Y)
    out = []
    for col in Y.T:
        for idx in _day_windows(col, span, combinations):
            out.append(first_order_relation(col[list(idx)]))
    return out


def shape_features(mapped: Iterable[Sequence[int]]) -> list[tuple[int, ...]]:
    """Unique patterns ordered by length, then lexicographically."""
    uniq = {tuple(int(b) for b in m) for m in mapped}
    return sorted(uniq, key=lambda p: (len(p), p))


def pattern_counts(mapped: Iterable[Sequence[int]]) -> list[tuple[tuple[int, ...], int]]:
    counts = Counter(tuple(m) for m in mapped)
    return [(p, counts[p]) for p in shape_features(counts)]


def covers(h_i: np.ndarray, h_j: np.ndarray, tol: float = COVER_TOL) -> bool:
    """Whether ``h_i`` restricted to the support of ``h_j`` and renormalized equals ``h_j``."""
    h_i = np.asarray(h_i, dtype=float)
    h_j = np.asarray(h_j, dtype=float)
    supp = h_j != 0
    if not supp.any():
        return False
    restricted = h_i[supp]
    norm = np.linalg.norm(restricted)
    if norm == 0:
        return False
    return bool(np.all(np.abs(restricted / norm - h_j[supp]) <= tol))


@dataclass
class SmoothedBases:
    """Cover-minimal normalized windows, one basis per row."""

    bases: np.ndarray  # K x N
    mass: np.ndarray  # summed raw consumption of the windows each basis represents
    n_candidates: int
    n_pruned: int = 0
    n_capped: int = 0


def _dedup_rows(rows: np.ndarray, tol: float) -> tuple[list[int], list[int]]:
    """Greedy tolerance dedup; returns kept row indices and each row's representative."""
    kept: list[int] = []
    rep = [0] * len(rows)
    order = np.lexsort(rows.T[::-1]) if rows.shape[1] else np.arange(len(rows))
    for i in order:
        if kept:
            diff = np.abs(rows[kept] - rows[i]).max(axis=1)
            hit = np.flatnonzero(diff <= tol)
            if hit.size:
                rep[i] = kept[hit[0]]
                continue
        kept.append(int(i))
        rep[i] = int(i)
    return sorted(kept), rep


def smooth_bases(
    Y,
    span: Iterable[int],
    combinations: str = "contiguous",
    budget: int = DEFAULT_BUDGET,
    max_bases: int | None = None,
    tol: float = COVER_TOL,
) -> SmoothedBases:
    """Normalized window combinations with every covered basis removed.

    Candidates are processed by support size, largest first, so a basis is
    only ever checked against bases that could cover it.  When
    ``max_bases`` is set, the bases representing the most consumption are
    kept.
    """
    Y = _as_array(Y)
    N = Y.shape[0]
    span = sorted(span)
    n_cand = count_combinations(Y, span, combinations)
    if n_cand > budget:
        raise CombinationBudgetError(
            f"{n_cand} candidate bases exceed the budget of {budget}; "
            "use a smaller max_span or subsample the days"
        )

    groups: dict[tuple[int, ...], list[np.ndarray]] = defaultdict(list)
    group_mass: dict[tuple[int, ...], list[float]] = defaultdict(list)
    for col in Y.T:
        for idx in _day_windows(col, span, combinations):
            vals = col[list(idx)]
            groups[idx].append(vals / np.linalg.norm(vals))
            group_mass[idx].append(float(vals.sum()))

    kept_vecs: list[np.ndarray] = []
    kept_mass: list[float] = []
    by_position: dict[int, set[int]] = defaultdict(set)
    supports = sorted(groups, key=lambda s: (-len(s), s))
    for supp in supports:
        rows = np.vstack(groups[supp])
        masses = np.asarray(group_mass[supp])
        keep, rep = _dedup_rows(rows, tol)
        rep_mass = defaultdict(float)
        for i, r in enumerate(rep):
            rep_mass[r] += masses[i]
        # bases whose support contains this one
        cand = set.intersection(*(by_position[p] for p in supp)) if kept_vecs else set()
        covered = np.zeros(len(keep), dtype=bool)
        if cand:
            cidx = sorted(cand)
            sub = np.vstack([kept_vecs[c][list(supp)] for c in cidx])
            norms = np.linalg.norm(sub, axis=1)
            ok = norms > 0
            sub = sub[ok] / norms[ok, None]
            cidx = [c for c, o in zip(cidx, ok) if o]
            if sub.size:
                for k, i in enumerate(keep):
                    diff = np.abs(sub - rows[i]).max(axis=1)
                    hit = np.flatnonzero(diff <= tol)
                    if hit.size:
                        covered[k] = True
                        kept_mass[cidx[hit[0]]] += rep_mass[i]
        for k, i in enumerate(keep):
            if covered[k]:
                continue
            vec = np.zeros(N)
            vec[list(supp)] = rows[i]
            pos = len(kept_vecs)
            kept_vecs.append(vec)
            kept_mass.append(rep_mass[i])
            for p in supp:
                by_position[p].add(pos)

    bases = np.vstack(kept_vecs) if kept_vecs else np.zeros((0, N))
    mass = np.asarray(kept_mass)
    n_capped = 0
    if max_bases is not None and len(bases) > max_bases:
        order = np.argsort(-mass, kind="stable")[:max_bases]
        order.sort()
        n_capped = len(bases) - max_bases
        bases, mass = bases[order], mass[order]
    return SmoothedBases(bases, mass, n_cand, n_cand - len(bases) - n_capped, n_capped)


def is_cover_minimal(bases: np.ndarray, tol: float = COVER_TOL) -> bool:
    for a, b in itertools.permutations(range(len(bases)), 2):
        if covers(bases[a], bases[b], tol):
            return False
    return True


def observed_starts(Y) -> list[int]:
    """Start intervals of the maximal nonzero runs across all days."""
    Y = _as_array(Y)
    return sorted({s for col in Y.T for s, _ in maximal_runs(col)})


def place_pattern(pattern: Sequence[int], start: int, N: int) -> np.ndarray:
    vec = np.zeros(N)
    vec[start:start + len(pattern)] = pattern
    return vec / np.linalg.norm(vec)


def init_dictionary(
    patterns: Sequence[Sequence[int]],
    smoothed: np.ndarray | SmoothedBases,
    N: int,
    starts: Iterable[int] | None = None,
    placement: str = "observed",
    tol: float = COVER_TOL,
) -> np.ndarray:
    """Columns: every pattern at every start (zero-filled, normalized), then the smoothed bases.

    With ``placement="all"`` patterns are placed at every feasible start;
    otherwise at ``starts``.  Duplicates (bases covering each other) appear once.
    """
    if isinstance(smoothed, SmoothedBases):
        smoothed = smoothed.bases
    smoothed = np.asarray(smoothed, dtype=float).reshape(-1, N)
    if placement == "all":
        start_list = list(range(N))
    elif placement == "observed":
        if starts is None:
            raise ValueError("observed placement needs the observed start intervals")
        start_list = sorted(set(int(s) for s in starts))
    else:
        raise ValueError(f"unknown placement policy {placement!r}")

    cols = []
    for pat in patterns:
        for s in start_list:
            if s + len(pat) <= N:
                cols.append(place_pattern(pat, s, N))
    cols.extend(smoothed)
    if not cols:
        raise ValueError("empty dictionary: no shape patterns and no smoothed bases")

    seen: dict[tuple, list[int]] = defaultdict(list)
    out: list[np.ndarray] = []
    for vec in cols:
        key = tuple(np.flatnonzero(vec))
        dup = False
        for k in seen[key]:
            if np.max(np.abs(out[k] - vec)) <= tol:
                dup = True
                break
        if not dup:
            seen[key].append(len(out))
            out.append(vec)
    H = np.column_stack(out)
    norms = np.linalg.norm(H, axis=0)
    assert np.all(np.abs(norms - 1) <= NORM_TOL)
    return H


@dataclass
class ShapeSummary:
    span: frozenset[int]
    patterns: list[tuple[int, ...]]
    counts: list[tuple[tuple[int, ...], int]]
    smoothed: SmoothedBases
    starts: list[int] = field(default_factory=list)


def discover(Y, max_span: int = DEFAULT_MAX_SPAN, combinations: str = "contiguous",
             budget: int = DEFAULT_BUDGET, max_smoothed: int | None = None) -> ShapeSummary:
    try:
        span = infer_span(Y, max_span)
    except ValueError:
        if not np.any(_as_array(Y) > 0):
            raise
        # every run is longer than the cap: use windows of the longest allowed length
        log.warning("span_fallback=%d", max_span)
        span = frozenset({max_span})
    mapped = consumption_mapping(Y, span, combinations)
    counts = pattern_counts(mapped)
    sm = smooth_bases(Y, span, combinations, budget=budget, max_bases=max_smoothed)
    return ShapeSummary(span, [p for p, _ in counts], counts, sm, observed_starts(Y))


def shape_dictionary(Y, max_span: int = DEFAULT_MAX_SPAN, placement: str = "observed",
                     combinations: str = "contiguous", budget: int = DEFAULT_BUDGET,
                     max_smoothed: int | None = None) -> tuple[np.ndarray, ShapeSummary]:
    """Shape-feature initialized dictionary for one device's training matrix."""
    summary = discover(Y, max_span, combinations, budget, max_smoothed)
    N = _as_array(Y).shape[0]
    H = init_dictionary(summary.patterns, summary.smoothed, N, summary.starts, placement)
    return H, summary


def random_dictionary(N: int, M: int, rng: np.random.Generator) -> np.ndarray:
    """Nonnegative random columns with unit norm (the no-shape-feature baseline)."""
    H = rng.random((N, M))
    return H / np.linalg.norm(H, axis=0)
