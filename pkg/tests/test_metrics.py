import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hydrosep import metrics as mt


def loop_accuracy(t, e, ybar):
    D, N, P = t.shape
    num = 0.0
    for d in range(D):
        for p in range(P):
            num += min(sum(abs(t[d, i, p]) for i in range(N)), sum(abs(e[d, i, p]) for i in range(N)))
    return num / sum(ybar[i, p] for i in range(N) for p in range(P))


def loop_nde(t, e):
    D, N, P = t.shape
    total = 0.0
    for d in range(D):
        for p in range(P):
            den = sum(t[d, i, p] ** 2 for i in range(N))
            if den > 0:
                total += sum((t[d, i, p] - e[d, i, p]) ** 2 for i in range(N)) / den
    return math.sqrt(total)


def loop_prf(t, e):
    ov = se = st_ = 0.0
    for i in range(t.shape[0]):
        for p in range(t.shape[1]):
            ov += min(t[i, p], e[i, p])
            se += e[i, p]
            st_ += t[i, p]
    p = ov / se if se > 0 else 0.0
    r = ov / st_ if st_ > 0 else 0.0
    return p, r, (2 * p * r / (p + r) if p + r > 0 else 0.0)


def fuzz(seed):
    r = np.random.default_rng(seed)
    D, N, P = r.integers(1, 5), r.integers(1, 8), r.integers(1, 6)
    t = r.exponential(1.0, (D, N, P)) * (r.random((D, N, P)) < 0.4)
    e = r.exponential(1.0, (D, N, P)) * (r.random((D, N, P)) < 0.6)
    t[0, 0, 0] += 0.5  # keep the aggregate positive
    return t, e, t.sum(axis=0)


def close(a, b):
    return abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_metrics_match_loop_oracles_on_fuzzed_instances():
    for seed in range(100):
        t, e, ybar = fuzz(seed)
        assert close(mt.accuracy(t, e, ybar), loop_accuracy(t, e, ybar))
        assert close(mt.nde(t, e), loop_nde(t, e))
        for d in range(t.shape[0]):
            got = mt.precision_recall_f(t[d], e[d])
            assert all(close(g, w) for g, w in zip(got, loop_prf(t[d], e[d])))


def test_perfect_estimates():
    t, _, ybar = fuzz(3)
    rep = mt.evaluate(t, t, ybar, [f"d{i}" for i in range(len(t))])
    assert close(rep.accuracy, 1.0) and rep.nde == 0.0
    assert all(close(f, 1.0) for _, _, f in rep.per_device if f > 0)


def test_zero_cases():
    t = np.zeros((1, 3, 2))
    assert mt.precision_recall_f(t[0], t[0]) == (0.0, 0.0, 0.0)
    assert mt.nde_with_skips(t, t) == (0.0, 2)
    with pytest.raises(ValueError):
        mt.accuracy(t, t, np.zeros((3, 2)))
    with pytest.raises(ValueError):
        mt.nde(np.zeros((1, 3, 2)), np.zeros((1, 3, 3)))


@given(st.integers(0, 2**32 - 1), st.randoms())
def test_device_permutation_invariance(seed, rnd):
    t, e, ybar = fuzz(seed)
    perm = list(range(len(t)))
    rnd.shuffle(perm)
    assert math.isclose(mt.accuracy(t[perm], e[perm], ybar), mt.accuracy(t, e, ybar), rel_tol=1e-12)
    assert math.isclose(mt.nde(t[perm], e[perm]), mt.nde(t, e), rel_tol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_bounds(seed):
    t, e, ybar = fuzz(seed)
    assert 0 <= mt.accuracy(t, e, ybar) <= 1 + 1e-12
    for d in range(len(t)):
        assert all(0 <= v <= 1 + 1e-12 for v in mt.precision_recall_f(t[d], e[d]))


def test_regularized_error():
    Y = np.array([[1.0, 2.0]])
    H = np.array([[1.0]])
    X = np.array([[0.5, 2.0]])
    assert mt.regularized_disagg_error([Y], [H], [X], 0.1) == 0.5 * 0.25 + 0.1 * 2.5


def test_report_csv_and_summary():
    t, e, ybar = fuzz(5)
    devs = [f"d{i}" for i in range(len(t))]
    rep = mt.evaluate(t, e, ybar, devs)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "metric,device,value"
    assert len(lines) == 1 + 4 + 3 * len(devs)
    table = mt.mean_std([rep, rep])
    assert all(sd == 0 for *_, sd in table)
