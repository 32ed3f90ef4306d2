"""Fidelity metrics between a real and a paired synthetic trace.

* average per-flow empirical CDFs of payload and IAT (raw units),
* AC-RMSE: RMS difference of flow-averaged autocorrelations at lags 1..20,
* 1-D order-1 Wasserstein distance of pooled log values.

AC and Wasserstein work on ln(value) with values clamped to the default
clip minima (1 byte, 1e-7 s) so zero payloads stay finite.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .preprocess import ClipConfig
from .trace_io import SummaryStats, TraceDataset, summarize

log = logging.getLogger(__name__)

FEATURES = ("payload", "iat")
_LOG_FLOOR = {"payload": ClipConfig().payload_min, "iat": ClipConfig().iat_min}


def _check_feature(feature: str) -> None:
    if feature not in FEATURES:
        raise ValueError(f"unknown feature {feature!r}; expected one of {FEATURES}")


def log_values(values, feature: str) -> np.ndarray:
    _check_feature(feature)
    return np.log(np.maximum(np.asarray(values, dtype=np.float64), _LOG_FLOOR[feature]))


def avg_flow_cdf(dataset: TraceDataset, feature: str, grid) -> np.ndarray:
    """Empirical CDF of each flow on ``grid``, averaged with equal weight per flow."""
    _check_feature(feature)
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise ValueError("grid must be sorted ascending")
    curves = []
    for flow in dataset:
        x = np.sort(getattr(flow, feature))
        if x.size == 0:
            warnings.warn(f"flow {flow.id!r} is empty; excluded", RuntimeWarning)
            continue
        curves.append(np.searchsorted(x, grid, side="right") / x.size)
    if not curves:
        raise DataError("dataset has no non-empty flows")
    return np.mean(curves, axis=0)


def cdf_grid(dataset: TraceDataset, feature: str, step: float = 0.1) -> np.ndarray:
    """Unique percentiles of the pooled values at ``step``-percent spacing."""
    _check_feature(feature)
    pooled = dataset.pooled(feature)
    if pooled.size == 0:
        raise DataError("empty dataset")
    qs = np.linspace(0.0, 100.0, int(round(100.0 / step)) + 1)
    return np.unique(np.percentile(pooled, qs))


def flow_autocorrelation(x, max_lag: int) -> np.ndarray:
    """Biased autocorrelation of one sequence at lags 1..max_lag (NaN where the flow is too short).

    Mean-centred, each lag sum divided by L, normalized by the lag-0 value.
    A constant sequence yields 0 at every defined lag.
    """
    x = np.asarray(x, dtype=np.float64)
    L = x.size
    out = np.full(max_lag, np.nan)
    d = x - x.mean()
    c0 = np.dot(d, d) / L
    for k in range(1, min(max_lag, L - 1) + 1):
        out[k - 1] = 0.0 if c0 == 0 else (np.dot(d[:-k], d[k:]) / L) / c0
    return out


@dataclass
class AutocorrelationSummary:
    mean_ac: np.ndarray  # (max_lag,), NaN where no flow contributes
    counts: np.ndarray  # flows contributing per lag
    n_constant: int  # flows with zero variance (AC set to 0)


def mean_autocorrelation(dataset: TraceDataset, feature: str, max_lag: int = 20) -> AutocorrelationSummary:
    _check_feature(feature)
    acs, n_const = [], 0
    for flow in dataset:
        x = log_values(getattr(flow, feature), feature)
        if x.size >= 2 and np.all(x == x[0]):
            n_const += 1
        acs.append(flow_autocorrelation(x, max_lag))
    if not acs:
        raise DataError("empty dataset")
    acs = np.array(acs)
    counts = np.sum(~np.isnan(acs), axis=0)
    with np.errstate(invalid="ignore"):
        mean = np.where(counts > 0, np.nansum(acs, axis=0) / np.maximum(counts, 1), np.nan)
    return AutocorrelationSummary(mean, counts, n_const)


def ac_rmse(real: TraceDataset, synth: TraceDataset, feature: str, max_lag: int = 20) -> float:
    """RMS difference between flow-averaged autocorrelation vectors of the log feature."""
    a = mean_autocorrelation(real, feature, max_lag)
    b = mean_autocorrelation(synth, feature, max_lag)
    valid = (a.counts > 0) & (b.counts > 0)
    if not valid[0]:
        raise DataError("no flow is long enough for lag 1")
    diff = a.mean_ac[valid] - b.mean_ac[valid]
    return float(np.sqrt(np.mean(diff * diff)))


def wasserstein_1d(real_values, synth_values) -> float:
    """Exact order-1 Wasserstein distance between two empirical samples.

    Integrates |F - G| over the merged support, which handles unequal sample
    sizes without resampling.
    """
    u = np.sort(np.asarray(real_values, dtype=np.float64).ravel())
    v = np.sort(np.asarray(synth_values, dtype=np.float64).ravel())
    if u.size == 0 or v.size == 0:
        raise DataError("wasserstein_1d needs two non-empty samples")
    allv = np.concatenate([u, v])
    allv.sort(kind="mergesort")
    deltas = np.diff(allv)
    Fu = np.searchsorted(u, allv[:-1], side="right") / u.size
    Fv = np.searchsorted(v, allv[:-1], side="right") / v.size
    return float(np.sum(np.abs(Fu - Fv) * deltas))


@dataclass
class FidelityReport:
    cdf_curves: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]]
    ac_rmse: dict[str, float]
    wd: dict[str, float]
    summary: tuple[SummaryStats, SummaryStats]
    constant_flows: dict[str, dict[str, int]] = field(default_factory=dict)

    def metrics(self) -> dict:
        out = {
            "ac_rmse": {k: _sig(v) for k, v in self.ac_rmse.items()},
            "wd": {k: _sig(v) for k, v in self.wd.items()},
        }
        if self.constant_flows:
            out["constant_flows"] = self.constant_flows
        return out


def _sig(x: float) -> float:
    return float(f"{x:.9g}")


def check_paired(real: TraceDataset, synth: TraceDataset) -> None:
    r, s = real.by_id(), synth.by_id()
    problems = [f"{i}: missing in synthetic" for i in r if i not in s]
    problems += [f"{i}: missing in real" for i in s if i not in r]
    problems += [f"{i}: length {len(r[i])} vs {len(s[i])}" for i in r if i in s and len(r[i]) != len(s[i])]
    if problems:
        shown = "; ".join(problems[:10])
        raise DataError(f"datasets are not paired ({len(problems)} mismatches): {shown}")


def evaluate(real: TraceDataset, synth: TraceDataset, max_lag: int = 20) -> FidelityReport:
    curves, acr, wd, const = {}, {}, {}, {}
    for feat in FEATURES:
        grid = cdf_grid(real, feat)
        curves[feat] = (grid, avg_flow_cdf(real, feat, grid), avg_flow_cdf(synth, feat, grid))
        acr[feat] = ac_rmse(real, synth, feat, max_lag)
        wd[feat] = wasserstein_1d(log_values(real.pooled(feat), feat), log_values(synth.pooled(feat), feat))
        const[feat] = {
            "real": mean_autocorrelation(real, feat, max_lag).n_constant,
            "synthetic": mean_autocorrelation(synth, feat, max_lag).n_constant,
        }
    return FidelityReport(curves, acr, wd, (summarize(real), summarize(synth)), const)


def emit_report(report: FidelityReport, out_dir) -> list[str]:
    """Write ``cdf_<feature>.csv``, ``metrics.json`` and ``summary.csv``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for feat, (grid, rc, sc) in report.cdf_curves.items():
        path = os.path.join(out_dir, f"cdf_{feat}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["value", "real_cdf", "synth_cdf"])
            for row in zip(grid, rc, sc):
                w.writerow([f"{x:.9g}" for x in row])
        paths.append(path)
    path = os.path.join(out_dir, "metrics.json")
    with open(path, "w") as fh:
        json.dump(report.metrics(), fh, indent=2)
    paths.append(path)
    path = os.path.join(out_dir, "summary.csv")
    real, synth = report.summary
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", "real", "synthetic"])
        for (name, a), (_, b) in zip(real.rows(), synth.rows()):
            w.writerow([name, f"{a:.9g}", f"{b:.9g}"])
    paths.append(path)
    return paths
