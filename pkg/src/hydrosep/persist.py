"""Versioned JSON model files (``.hsmodel.json``)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .discriminative import AggregateModel
from .inference import DeviceModel

SCHEMA_VERSION = 1
MODEL_SUFFIX = ".hsmodel.json"
NORM_TOL = 1e-9


class ModelVersionError(ValueError):
    pass


class CorruptModelError(ValueError):
    pass


@dataclass
class ModelFile:
    devices: list[DeviceModel] = field(default_factory=list)
    compound: AggregateModel | None = None
    schema_version: int = SCHEMA_VERSION

    def device(self, device_id: str) -> DeviceModel:
        for m in self.devices:
            if m.device_id == device_id:
                return m
        raise KeyError(device_id)


def _columns(H: np.ndarray) -> dict:
    H = np.asarray(H, dtype=float)
    norms = np.linalg.norm(H, axis=0)
    zero = [int(j) for j in np.flatnonzero(norms == 0)]
    bad = [int(j) for j in np.flatnonzero((norms != 0) & (np.abs(norms - 1) > NORM_TOL))]
    if bad:
        raise ValueError(f"columns {bad[:5]} are not unit norm")
    return {"n_rows": H.shape[0], "n_cols": H.shape[1],
            "columns": [[float(v) for v in H[:, j]] for j in range(H.shape[1])],
            "zero_columns": zero}


def _matrix(obj: dict) -> np.ndarray:
    n, m = int(obj["n_rows"]), int(obj["n_cols"])
    cols = obj["columns"]
    if len(cols) != m or any(len(c) != n for c in cols):
        raise CorruptModelError("dictionary dimensions do not match the stored columns")
    H = np.array(cols, dtype=float).T.reshape(n, m)
    norms = np.linalg.norm(H, axis=0)
    zero = set(obj.get("zero_columns", []))
    for j in range(m):
        if j in zero:
            if norms[j] != 0:
                raise CorruptModelError(f"column {j} flagged zero but is not")
        elif abs(norms[j] - 1) > NORM_TOL:
            raise CorruptModelError(f"column {j} is not unit norm")
    return H


def to_dict(mf: ModelFile) -> dict:
    out = {"schema_version": mf.schema_version, "devices": []}
    for m in mf.devices:
        out["devices"].append({
            "device_id": m.device_id, "b": float(m.b), "alpha0": float(m.alpha0),
            "beta0": float(m.beta0), "span": [int(s) for s in m.span],
            "q_trace": [float(q) for q in m.q_trace], "H": _columns(m.H),
        })
    if mf.compound is not None:
        c = mf.compound
        out["compound"] = {
            "devices": list(c.devices), "block_sizes": [int(s) for s in c.block_sizes],
            "b_per_device": [float(b) for b in c.b_per_device],
            "alpha0_bar": float(c.alpha0_bar), "beta0_bar": float(c.beta0_bar),
            "q_trace": [float(q) for q in c.q_trace], "H_bar": _columns(c.H_bar),
        }
    return out


def from_dict(obj: dict) -> ModelFile:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ModelVersionError(f"model schema_version {version!r}, reader supports "
                                f"{SCHEMA_VERSION}")
    try:
        devices = [DeviceModel(d["device_id"], _matrix(d["H"]), d["b"], d["alpha0"],
                               d["beta0"], tuple(d["span"]), list(d["q_trace"]))
                   for d in obj["devices"]]
        compound = None
        if obj.get("compound") is not None:
            c = obj["compound"]
            compound = AggregateModel(_matrix(c["H_bar"]), list(c["devices"]),
                                      list(c["block_sizes"]), list(c["b_per_device"]),
                                      c["alpha0_bar"], c["beta0_bar"], list(c["q_trace"]))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, CorruptModelError):
            raise
        raise CorruptModelError(f"invalid model content: {exc}") from None
    return ModelFile(devices, compound, version)


def dumps(mf: ModelFile) -> str:
    # json writes floats with repr, which round-trips exactly
    return json.dumps(to_dict(mf), indent=1) + "\n"


def save_model(mf: ModelFile, path: str | Path) -> None:
    Path(path).write_text(dumps(mf), encoding="utf-8", newline="\n")


def load_model(path: str | Path) -> ModelFile:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") \
            from None
    if not isinstance(obj, dict):
        raise CorruptModelError(f"{path}: top level is not an object")
    return from_dict(obj)
