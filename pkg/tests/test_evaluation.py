import csv
import json
import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from packetgen.errors import DataError
from packetgen.evaluation import (
    ac_rmse,
    avg_flow_cdf,
    cdf_grid,
    check_paired,
    emit_report,
    evaluate,
    flow_autocorrelation,
    log_values,
    mean_autocorrelation,
    wasserstein_1d,
)
from packetgen.trace_io import Flow, TraceDataset


def ds_from(values, feature="payload"):
    flows = []
    for i, v in enumerate(values):
        v = np.asarray(v, dtype=float)
        other = np.ones_like(v)
        flows.append(Flow(f"f{i}", v, other) if feature == "payload" else Flow(f"f{i}", other, v))
    return TraceDataset(tuple(flows))


def random_dataset(rng, n=15, prefix="f"):
    flows = []
    for i in range(n):
        L = int(rng.integers(1, 40))
        flows.append(Flow(f"{prefix}{i}", rng.lognormal(5, 1, L), rng.lognormal(-3, 2, L)))
    return TraceDataset(tuple(flows))


# --- CDFs ---------------------------------------------------------------------


def test_single_flow_cdf():
    assert avg_flow_cdf(ds_from([[1, 2, 3]]), "payload", [2.0])[0] == pytest.approx(2 / 3)


def test_two_flow_cdf_weights_flows_equally():
    assert avg_flow_cdf(ds_from([[1], [3]]), "payload", [2.0])[0] == 0.5
    # a 1-packet and a 3-packet flow: per-flow average 0.5, pooled would be 0.25
    assert avg_flow_cdf(ds_from([[1], [3, 3, 3]]), "payload", [2.0])[0] == 0.5


def test_cdf_reaches_one_above_maximum(rng):
    ds = random_dataset(rng)
    for feat in ("payload", "iat"):
        top = ds.pooled(feat).max()
        assert avg_flow_cdf(ds, feat, [top, top * 2]).tolist() == [1.0, 1.0]


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_cdf_curve_properties(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng)
    grid = cdf_grid(ds, "iat")
    c = avg_flow_cdf(ds, "iat", grid)
    assert np.all((0 <= c) & (c <= 1))
    assert np.all(np.diff(c) >= 0)
    assert c[-1] == 1.0
    assert np.all(np.diff(grid) > 0)


def test_cdf_unsorted_grid_rejected():
    with pytest.raises(ValueError):
        avg_flow_cdf(ds_from([[1]]), "payload", [3, 1])


def test_unknown_feature_rejected():
    with pytest.raises(ValueError):
        log_values([1.0], "size")


# --- autocorrelation --------------------------------------------------------------


def naive_ac(x, lag):
    x = [float(v) for v in x]
    L = len(x)
    mean = sum(x) / L
    c0 = sum((v - mean) ** 2 for v in x) / L
    if c0 == 0:
        return 0.0
    ck = sum((x[t] - mean) * (x[t + lag] - mean) for t in range(L - lag)) / L
    return ck / c0


def naive_ac_rmse(real, synth, feature, max_lag):
    def mean_vec(ds):
        vec = []
        for lag in range(1, max_lag + 1):
            vals = [naive_ac(np.log(getattr(f, feature)), lag) for f in ds if len(f) >= lag + 1]
            vec.append(sum(vals) / len(vals) if vals else None)
        return vec
    a, b = mean_vec(real), mean_vec(synth)
    sq = [(x - y) ** 2 for x, y in zip(a, b) if x is not None and y is not None]
    return math.sqrt(sum(sq) / len(sq))


@pytest.mark.parametrize("seed", range(5))
def test_ac_rmse_matches_definition(seed):
    rng = np.random.default_rng(seed)
    real, synth = random_dataset(rng), random_dataset(rng)
    for feat in ("payload", "iat"):
        assert abs(ac_rmse(real, synth, feat) - naive_ac_rmse(real, synth, feat, 20)) <= 1e-10


def test_ac_rmse_identity(rng):
    ds = random_dataset(rng)
    assert ac_rmse(ds, ds, "payload") == 0.0


def test_ac_rmse_constant_difference(monkeypatch):
    import packetgen.evaluation as ev

    vals = iter([np.full(20, 0.5), np.full(20, 0.3)])
    real_summary = ev.AutocorrelationSummary(next(vals), np.ones(20, int), 0)
    synth_summary = ev.AutocorrelationSummary(next(vals), np.ones(20, int), 0)
    summaries = iter([real_summary, synth_summary])
    monkeypatch.setattr(ev, "mean_autocorrelation", lambda *a, **k: next(summaries))
    assert ev.ac_rmse(None, None, "payload") == pytest.approx(0.2, abs=1e-15)


def test_constant_flows_count_as_zero():
    ac = flow_autocorrelation(np.full(10, 3.0), 5)
    np.testing.assert_array_equal(ac, 0.0)
    summary = mean_autocorrelation(ds_from([[5] * 10, [1, 2, 3, 4, 5, 6]]), "payload", 3)
    assert summary.n_constant == 1


def test_short_flows_skip_long_lags():
    ac = flow_autocorrelation([1.0, 2.0, 4.0], 5)
    assert np.all(np.isfinite(ac[:2])) and np.all(np.isnan(ac[2:]))


def test_ac_rmse_requires_lag_one():
    ds = ds_from([[1.0], [2.0]])
    with pytest.raises(DataError):
        ac_rmse(ds, ds, "payload")


# --- Wasserstein ------------------------------------------------------------------


def test_w1_hand_example():
    assert wasserstein_1d([0, 1], [0, 0]) == 0.5


samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40)


@given(samples, samples)
def test_w1_matches_scipy(u, v):
    assert wasserstein_1d(u, v) == pytest.approx(wasserstein_distance(u, v), abs=1e-9, rel=1e-9)


@given(samples)
def test_w1_identity(u):
    assert wasserstein_1d(u, u) == 0.0


@given(samples, samples)
def test_w1_symmetry(u, v):
    assert abs(wasserstein_1d(u, v) - wasserstein_1d(v, u)) <= 1e-9


@given(samples, samples, samples)
def test_w1_triangle(u, v, w):
    assert wasserstein_1d(u, w) <= wasserstein_1d(u, v) + wasserstein_1d(v, w) + 1e-9


@given(samples, st.floats(-100, 100))
def test_w1_translation(u, c):
    u = np.asarray(u)
    assert abs(wasserstein_1d(u, u + c) - abs(c)) <= 1e-9 * max(1.0, np.abs(u).max())


def test_w1_empty_rejected():
    with pytest.raises(DataError):
        wasserstein_1d([], [1.0])


# --- report -----------------------------------------------------------------------


def _paired(rng, n=12):
    real = random_dataset(rng, n, prefix="r")
    synth = TraceDataset(tuple(
        Flow(f.id, rng.lognormal(5, 1, len(f)), rng.lognormal(-3, 2, len(f))) for f in real
    ))
    return real, synth


def test_evaluate_self_is_zero(rng):
    real, _ = _paired(rng)
    rep = evaluate(real, real)
    assert rep.ac_rmse == {"payload": 0.0, "iat": 0.0}
    assert rep.wd == {"payload": 0.0, "iat": 0.0}


def test_check_paired_lists_mismatches(rng):
    real, synth = _paired(rng)
    broken = TraceDataset(synth.flows[1:] + (Flow("zz", [1.0], [1.0]),))
    with pytest.raises(DataError, match="mismatches"):
        check_paired(real, broken)
    check_paired(real, synth)


def test_emit_report_files(tmp_path, rng):
    real, synth = _paired(rng)
    rep = evaluate(real, synth)
    paths = emit_report(rep, tmp_path / "out")
    names = sorted(os.path.basename(p) for p in paths)
    assert names == ["cdf_iat.csv", "cdf_payload.csv", "metrics.json", "summary.csv"]

    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert metrics == json.loads(json.dumps(rep.metrics()))
    for feat in ("payload", "iat"):
        assert metrics["wd"][feat] == pytest.approx(rep.wd[feat], rel=1e-8)

    for feat in ("payload", "iat"):
        with open(tmp_path / "out" / f"cdf_{feat}.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["value", "real_cdf", "synth_cdf"]
        cols = np.array(rows[1:], dtype=float)
        assert np.all(np.diff(cols, axis=0) >= 0)
        assert np.all((cols[:, 1:] >= 0) & (cols[:, 1:] <= 1))

    with open(tmp_path / "out" / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["statistic", "real", "synthetic"]
    assert len(rows) == 6
