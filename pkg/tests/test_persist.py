import json

import numpy as np
import pytest

from hydrosep import persist
from hydrosep.discriminative import build_aggregate
from hydrosep.inference import DeviceModel


def model_file(rng):
    devs = []
    for name, M in (("toilet", 3), ("shower", 2)):
        H = rng.random((6, M))
        H /= np.linalg.norm(H, axis=0)
        devs.append(DeviceModel(name, H, b=rng.random(), alpha0=1.7, beta0=0.3,
                                span=(1, 2), q_trace=[-1.5, -1.25]))
    devs[1].H[:, 1] = 0.0
    agg = build_aggregate(devs)
    agg.alpha0_bar, agg.beta0_bar = 2.1, 0.9
    return persist.ModelFile(devs, agg)


def test_round_trip_is_bitwise(tmp_path, rng):
    mf = model_file(rng)
    path = tmp_path / ("m" + persist.MODEL_SUFFIX)
    persist.save_model(mf, path)
    back = persist.load_model(path)
    for a, b in zip(mf.devices, back.devices):
        assert np.array_equal(a.H, b.H) and a.b == b.b and a.span == b.span
        assert a.q_trace == b.q_trace and (a.alpha0, a.beta0) == (b.alpha0, b.beta0)
    assert np.array_equal(mf.compound.H_bar, back.compound.H_bar)
    assert back.compound.block_sizes == [3, 2] and back.compound.alpha0_bar == 2.1
    assert persist.dumps(back) == path.read_text()
    assert back.device("shower").M == 2


def test_newer_schema_rejected(tmp_path, rng):
    obj = persist.to_dict(model_file(rng))
    obj["schema_version"] = persist.SCHEMA_VERSION + 1
    path = tmp_path / "m.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(persist.ModelVersionError):
        persist.load_model(path)


def test_truncated_file_rejected(tmp_path, rng):
    path = tmp_path / "m.json"
    text = persist.dumps(model_file(rng))
    path.write_text(text[: len(text) // 2])
    with pytest.raises(persist.CorruptModelError):
        persist.load_model(path)


def test_non_unit_column_rejected(rng):
    obj = persist.to_dict(model_file(rng))
    obj["devices"][0]["H"]["columns"][0][0] += 0.5
    with pytest.raises(persist.CorruptModelError):
        persist.from_dict(obj)
    mf = model_file(rng)
    mf.devices[0].H[0, 0] += 0.5
    with pytest.raises(ValueError):
        persist.dumps(mf)


def test_missing_field_rejected(rng):
    obj = persist.to_dict(model_file(rng))
    del obj["devices"][0]["b"]
    with pytest.raises(persist.CorruptModelError):
        persist.from_dict(obj)
