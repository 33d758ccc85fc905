"""Whole-home and per-device disaggregation scores."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


def _stack(mats) -> np.ndarray:
    """D x N x P array from a sequence of matrices (or objects with ``values``)."""
    arr = np.stack([np.asarray(getattr(m, "values", m), dtype=float) for m in mats])
    if arr.ndim != 3:
        raise ValueError("expected a list of N x P matrices")
    return arr


def _check(truth, est) -> tuple[np.ndarray, np.ndarray]:
    t, e = _stack(truth), _stack(est)
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {e.shape}")
    return t, e


def accuracy(truth, est, Y_bar) -> float:
    """sum_{d,p} min(|y_p^(d)|_1, |yhat_p^(d)|_1) / sum of the aggregate."""
    t, e = _check(truth, est)
    total = float(np.sum(np.asarray(getattr(Y_bar, "values", Y_bar), dtype=float)))
    if total <= 0:
        raise ValueError("aggregate total is zero")
    day_t = np.abs(t).sum(axis=1)
    day_e = np.abs(e).sum(axis=1)
    return float(np.minimum(day_t, day_e).sum() / total)


def nde_with_skips(truth, est) -> tuple[float, int]:
    """NDE and the number of (device, day) pairs skipped for zero true norm."""
    t, e = _check(truth, est)
    den = (t ** 2).sum(axis=1)
    num = ((t - e) ** 2).sum(axis=1)
    ok = den > 0
    return float(np.sqrt(np.sum(num[ok] / den[ok]))), int(np.sum(~ok))


def nde(truth, est) -> float:
    return nde_with_skips(truth, est)[0]


def precision_recall_f(truth, est) -> tuple[float, float, float]:
    """Overlap precision, recall and F for one device (N x P arrays)."""
    t = np.asarray(getattr(truth, "values", truth), dtype=float)
    e = np.asarray(getattr(est, "values", est), dtype=float)
    if t.shape != e.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {e.shape}")
    overlap = float(np.minimum(t, e).sum())
    se, st = float(e.sum()), float(t.sum())
    p = overlap / se if se > 0 else 0.0
    r = overlap / st if st > 0 else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def regularized_disagg_error(Y_set, H_set, X_set, lam: float) -> float:
    total = 0.0
    for Y, H, X in zip(Y_set, H_set, X_set):
        Y = np.asarray(getattr(Y, "values", Y), dtype=float)
        X = np.asarray(X, dtype=float)
        R = Y - np.asarray(H, dtype=float) @ X
        total += 0.5 * float(np.sum(R * R)) + lam * float(np.sum(X))
    return total


@dataclass
class EvalReport:
    accuracy: float
    nde: float
    devices: list[str]
    per_device: list[tuple[float, float, float]]
    nde_skipped: int = 0
    zero_denominators: dict[str, int] = field(default_factory=dict)

    @property
    def avg_f(self) -> float:
        return float(np.mean([f for _, _, f in self.per_device]))

    def rows(self) -> list[tuple[str, str, float]]:
        out = [("accuracy", "all", self.accuracy), ("nde", "all", self.nde),
               ("nde_skipped", "all", float(self.nde_skipped))]
        for dev, (p, r, f) in zip(self.devices, self.per_device):
            out += [("precision", dev, p), ("recall", dev, r), ("f_measure", dev, f)]
        out.append(("avg_f", "all", self.avg_f))
        return out

    def to_csv(self) -> str:
        lines = ["metric,device,value"]
        lines += [f"{m},{d},{v!r}" for m, d, v in self.rows()]
        return "\n".join(lines) + "\n"


def evaluate(truth: Sequence, est: Sequence, Y_bar, devices: Sequence[str]) -> EvalReport:
    t, e = _check(truth, est)
    nde_val, skipped = nde_with_skips(t, e)
    per_dev, zeros = [], {}
    for d, dev in enumerate(devices):
        per_dev.append(precision_recall_f(t[d], e[d]))
        zeros[dev] = int(e[d].sum() <= 0) + int(t[d].sum() <= 0)
    return EvalReport(accuracy(t, e, Y_bar), nde_val, list(devices), per_dev, skipped, zeros)


def mean_std(reports: Sequence[EvalReport]) -> list[tuple[str, str, float, float]]:
    """Per-metric mean and standard deviation across folds."""
    table: dict[tuple[str, str], list[float]] = {}
    for r in reports:
        for m, d, v in r.rows():
            table.setdefault((m, d), []).append(v)
    return [(m, d, float(np.mean(v)), float(np.std(v))) for (m, d), v in table.items()]
