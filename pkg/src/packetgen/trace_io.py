"""Packet trace reading/writing, flow grouping, splitting and summary statistics.

A trace is a delimited text file with one row per packet::

    <flow_id>,<payload_bytes>,<iat_seconds>

Rows sharing a flow id form one flow; flows are kept in first-appearance
order and packets keep their row order.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, NamedTuple, Union

import numpy as np

from .errors import DataError, TraceParseError, TraceValidationError

PathOrStream = Union[str, os.PathLike, IO[str], IO[bytes]]


class Packet(NamedTuple):
    payload: float
    iat: float


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Flow:
    """One flow: payload sizes (bytes) and inter-arrival times (s), in order."""

    id: str
    payload: np.ndarray
    iat: np.ndarray

    def __post_init__(self):
        payload = _frozen_array(self.payload)
        iat = _frozen_array(self.iat)
        if payload.ndim != 1 or payload.shape != iat.shape:
            raise DataError(f"flow {self.id!r}: payload and iat must be 1-D of equal length")
        if payload.size == 0:
            raise DataError(f"flow {self.id!r} has no packets")
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "iat", iat)

    @classmethod
    def from_packets(cls, flow_id, packets: Iterable[tuple[float, float]]) -> "Flow":
        packets = list(packets)
        return cls(flow_id, [p[0] for p in packets], [p[1] for p in packets])

    def __len__(self) -> int:
        return int(self.payload.size)

    @property
    def packets(self) -> list[Packet]:
        return [Packet(float(p), float(d)) for p, d in zip(self.payload, self.iat)]

    @property
    def duration(self) -> float:
        return float(self.iat.sum())

    def __eq__(self, other):
        if not isinstance(other, Flow):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.payload, other.payload)
            and np.array_equal(self.iat, other.iat)
        )

    __hash__ = None


@dataclass(frozen=True)
class TraceDataset:
    flows: tuple[Flow, ...] = field(default_factory=tuple)

    def __post_init__(self):
        flows = tuple(self.flows)
        ids = [f.id for f in flows]
        if len(set(ids)) != len(ids):
            seen, dup = set(), []
            for i in ids:
                if i in seen:
                    dup.append(i)
                seen.add(i)
            raise DataError(f"duplicate flow ids: {sorted(set(dup))[:5]}")
        object.__setattr__(self, "flows", flows)

    def __len__(self) -> int:
        return len(self.flows)

    def __iter__(self) -> Iterator[Flow]:
        return iter(self.flows)

    def __getitem__(self, idx) -> Flow:
        return self.flows[idx]

    @property
    def ids(self) -> list[str]:
        return [f.id for f in self.flows]

    @property
    def lengths(self) -> np.ndarray:
        return np.array([len(f) for f in self.flows], dtype=np.int64)

    @property
    def n_packets(self) -> int:
        return int(sum(len(f) for f in self.flows))

    def by_id(self) -> dict[str, Flow]:
        return {f.id: f for f in self.flows}

    def pooled(self, feature: str) -> np.ndarray:
        if not self.flows:
            return np.empty(0)
        return np.concatenate([getattr(f, feature) for f in self.flows])


@dataclass(frozen=True)
class TraceFormat:
    """Row layout. ``header`` is ``"auto"`` (detect a non-numeric first row), True or False."""

    delimiter: str = ","
    header: Union[bool, str] = "auto"


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _open_text(source: PathOrStream):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8", newline=""), True
    if isinstance(source, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(source, "mode", ""):
        return io.TextIOWrapper(source, encoding="utf-8"), False
    return source, False


def parse_trace(source: PathOrStream, fmt: TraceFormat = TraceFormat()) -> TraceDataset:
    """Parse a packet trace into a :class:`TraceDataset`.

    Raises :class:`TraceParseError` (with the 1-based line number) on a
    malformed row and :class:`TraceValidationError` on negative values.
    """
    stream, owned = _open_text(source)
    order: list[str] = []
    payloads: dict[str, list[float]] = {}
    iats: dict[str, list[float]] = {}
    try:
        first_content = True
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line:
                continue
            cols = [c.strip() for c in line.split(fmt.delimiter)]
            if first_content:
                first_content = False
                if fmt.header is True:
                    continue
                if fmt.header == "auto" and len(cols) == 3 and not (
                    _is_number(cols[1]) and _is_number(cols[2])
                ):
                    continue
            if len(cols) != 3:
                raise TraceParseError(f"expected 3 columns, got {len(cols)}", lineno)
            fid, p_txt, d_txt = cols
            if not fid:
                raise TraceParseError("empty flow id", lineno)
            try:
                p, d = float(p_txt), float(d_txt)
            except ValueError:
                raise TraceParseError(f"non-numeric field in {line!r}", lineno) from None
            if not (math.isfinite(p) and math.isfinite(d)):
                raise TraceParseError(f"non-finite field in {line!r}", lineno)
            if p < 0:
                raise TraceValidationError(f"line {lineno}: negative payload {p}")
            if d < 0:
                raise TraceValidationError(f"line {lineno}: negative inter-arrival time {d}")
            if fid not in payloads:
                order.append(fid)
                payloads[fid] = []
                iats[fid] = []
            payloads[fid].append(p)
            iats[fid].append(d)
    finally:
        if owned:
            stream.close()
    return TraceDataset(tuple(Flow(fid, payloads[fid], iats[fid]) for fid in order))


def format_trace(dataset: TraceDataset, header: bool = False) -> str:
    buf = io.StringIO()
    write_trace(dataset, buf, header=header)
    return buf.getvalue()


def write_trace(dataset: TraceDataset, dest: PathOrStream, header: bool = False) -> None:
    """Write ``dataset`` in the row format; floats use ``repr`` so re-parsing is exact."""
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_trace(dataset, fh, header=header)
        return
    if header:
        dest.write("flow_id,payload,iat\n")
    for flow in dataset:
        for p, d in zip(flow.payload.tolist(), flow.iat.tolist()):
            dest.write(f"{flow.id},{p!r},{d!r}\n")


def split_by_flow(
    dataset: TraceDataset, test_fraction: float = 0.2, seed: int = 0
) -> tuple[TraceDataset, TraceDataset]:
    """Partition flows into (train, test), preserving the original flow order in each part."""
    n = len(dataset)
    if n < 2:
        raise DataError(f"need at least 2 flows to split, got {n}")
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n_test = int(math.floor(test_fraction * n + 0.5))
    n_test = min(max(n_test, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    is_test = np.zeros(n, dtype=bool)
    is_test[perm[:n_test]] = True
    train = tuple(f for f, t in zip(dataset.flows, is_test) if not t)
    test = tuple(f for f, t in zip(dataset.flows, is_test) if t)
    return TraceDataset(train), TraceDataset(test)


@dataclass(frozen=True)
class SummaryStats:
    total_flows: int
    total_packets: int
    avg_pkts_per_flow: float
    total_volume: float
    avg_flow_duration: float

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("Total Flows", self.total_flows),
            ("Total Packets", self.total_packets),
            ("Average Pkts./Flow", self.avg_pkts_per_flow),
            ("Total Volume (MB)", self.total_volume / 1e6),
            ("Average Flow Duration (s)", self.avg_flow_duration),
        ]


def summarize(dataset: TraceDataset) -> SummaryStats:
    if len(dataset) == 0:
        raise DataError("cannot summarize an empty dataset")
    n_flows = len(dataset)
    n_packets = dataset.n_packets
    volume = float(sum(f.payload.sum() for f in dataset))
    duration = float(np.mean([f.duration for f in dataset]))
    return SummaryStats(
        total_flows=n_flows,
        total_packets=n_packets,
        avg_pkts_per_flow=n_packets / n_flows,
        total_volume=volume,
        avg_flow_duration=duration,
    )
