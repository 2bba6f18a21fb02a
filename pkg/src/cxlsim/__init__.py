"""Trace-driven simulator for CXL.mem memory topologies."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CollectorError,
    ConfigError,
    CxlSimError,
    PlacementError,
    TopologyError,
    TraceFormatError,
)
from .placement import LOCAL, AllocationMap, classify_epoch, scale_counts  # noqa: E402
from .timing import SimConfig, SimReport, run_live, run_replay  # noqa: E402
from .topology import Topology, parse_topology, resolve_path, switches_on_path  # noqa: E402
from .trace import Trace, read_trace, synth_trace, write_trace  # noqa: E402

__all__ = [
    "LOCAL",
    "AllocationMap",
    "CollectorError",
    "ConfigError",
    "CxlSimError",
    "PlacementError",
    "SimConfig",
    "SimReport",
    "Topology",
    "TopologyError",
    "Trace",
    "TraceFormatError",
    "classify_epoch",
    "parse_topology",
    "read_trace",
    "resolve_path",
    "run_live",
    "run_replay",
    "scale_counts",
    "switches_on_path",
    "synth_trace",
    "write_trace",
]
