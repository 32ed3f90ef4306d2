"""Log-and-standardize transform between raw packets and model space.

Raw values are clipped to operational ranges, log-transformed and
standardized with moments fitted on training flows only.  Coordinate 0 is
payload, coordinate 1 is inter-arrival time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateDataError
from .trace_io import Flow, TraceDataset


@dataclass(frozen=True)
class ClipConfig:
    payload_min: float = 1.0
    payload_max: float = 65535.0
    iat_min: float = 1e-7
    iat_max: float = 3600.0

    def __post_init__(self):
        if not 0 < self.payload_min <= self.payload_max:
            raise ValueError("require 0 < payload_min <= payload_max")
        if not 0 < self.iat_min < self.iat_max:
            raise ValueError("require 0 < iat_min < iat_max")

    def clip(self, payload, iat) -> tuple[np.ndarray, np.ndarray]:
        p = np.clip(np.asarray(payload, dtype=np.float64), self.payload_min, self.payload_max)
        d = np.clip(np.asarray(iat, dtype=np.float64), self.iat_min, self.iat_max)
        return p, d


@dataclass(frozen=True)
class Normalizer:
    m: np.ndarray
    r: np.ndarray
    tail_log_threshold: float
    tail_norm_threshold: float
    flow_len_mean: float
    flow_len_std: float
    clip: ClipConfig = field(default_factory=ClipConfig)

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64).reshape(2)
        r = np.asarray(self.r, dtype=np.float64).reshape(2)
        if np.any(r <= 0) or self.flow_len_std <= 0:
            raise DegenerateDataError("normalizer scales must be positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "r", r)

    @classmethod
    def from_moments(cls, m, r, tail_log_threshold, flow_len_mean, flow_len_std, clip=ClipConfig()):
        """Build a normalizer, deriving the normalized tail threshold from its log value."""
        m = np.asarray(m, dtype=np.float64)
        r = np.asarray(r, dtype=np.float64)
        return cls(
            m=m,
            r=r,
            tail_log_threshold=float(tail_log_threshold),
            tail_norm_threshold=float((tail_log_threshold - m[1]) / r[1]),
            flow_len_mean=float(flow_len_mean),
            flow_len_std=float(flow_len_std),
            clip=clip,
        )


def nearest_rank_quantile(values, q: float) -> float:
    """Nearest-rank empirical quantile: the ceil(q*n)-th smallest value."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        raise DataError("quantile of an empty sample")
    rank = min(max(int(math.ceil(q * x.size)), 1), x.size)
    return float(x[rank - 1])


def fit_normalizer(train: TraceDataset, clip: ClipConfig = ClipConfig(), tail_quantile: float = 0.998) -> Normalizer:
    if train.n_packets < 2:
        raise DataError("need at least 2 training packets to fit the normalizer")
    p, d = clip.clip(train.pooled("payload"), train.pooled("iat"))
    u = np.column_stack([np.log(p), np.log(d)])
    m = u.mean(axis=0)
    r = u.std(axis=0)
    for name, s in zip(("payload", "iat"), r):
        if not s > 0:
            raise DegenerateDataError(f"zero variance in log {name} over training packets")
    log_len = np.log(train.lengths.astype(np.float64))
    len_std = float(log_len.std())
    if not len_std > 0:
        raise DegenerateDataError("zero variance in log flow length over training flows")
    tau = nearest_rank_quantile(u[:, 1], tail_quantile)
    return Normalizer.from_moments(m, r, tau, float(log_len.mean()), len_std, clip)


def transform(norm: Normalizer, payload, iat) -> np.ndarray:
    """Map raw (payload, iat) values to normalized model space; returns shape (..., 2)."""
    p, d = norm.clip.clip(payload, iat)
    u = np.stack([np.log(p), np.log(d)], axis=-1)
    return (u - norm.m) / norm.r


def inverse_transform(norm: Normalizer, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=np.float64)
    c = norm.clip
    # clamp in log space first so extreme draws cannot overflow exp
    with np.errstate(divide="ignore"):
        lo = np.log([c.payload_min, c.iat_min])
        hi = np.log([c.payload_max, c.iat_max])
    u = z * norm.r + norm.m
    raw = np.exp(np.clip(u, lo, hi))
    raw = np.where(u >= hi, [c.payload_max, c.iat_max], np.where(u <= lo, [c.payload_min, c.iat_min], raw))
    return c.clip(raw[..., 0], raw[..., 1])


def transform_flow(norm: Normalizer, flow: Flow) -> np.ndarray:
    return transform(norm, flow.payload, flow.iat)


def transform_dataset(norm: Normalizer, dataset: TraceDataset) -> list[np.ndarray]:
    return [transform_flow(norm, f) for f in dataset]


def flow_length_feature(norm: Normalizer, length) -> np.ndarray | float:
    L = np.asarray(length, dtype=np.float64)
    if np.any(L < 1):
        raise ValueError("flow length must be >= 1")
    xi = (np.log(L) - norm.flow_len_mean) / norm.flow_len_std
    return float(xi) if xi.ndim == 0 else xi
