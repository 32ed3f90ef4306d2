"""Compact HMM + Student-t MDN generator for packet-level traffic."""

from .errors import DataError, NumericalError, PacketGenError
from .trace_io import Flow, Packet, TraceDataset, parse_trace, split_by_flow, summarize, write_trace

__all__ = [
    "DataError",
    "Flow",
    "NumericalError",
    "Packet",
    "PacketGenError",
    "TraceDataset",
    "parse_trace",
    "split_by_flow",
    "summarize",
    "write_trace",
]

__version__ = "0.1.0"
