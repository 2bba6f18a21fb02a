"""Report emission: canonical JSON, per-epoch CSV, and run-config loading."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Any

from .errors import ConfigError
from .placement import PlacementPolicy, check_policy, policy_from_dict
from .timing import SimConfig, SimReport
from .topology import Topology, load_topology
from .trace import Trace, load_trace

FLOAT_DIGITS = 3

CSV_COLUMNS = (
    "epoch",
    "start_ns",
    "end_ns",
    "latency_ns",
    "congestion_ns",
    "bandwidth_ns",
    "total_ns",
    "remote_ops",
    "local_ops",
    "samples",
    "llc_misses",
    "l2_stalls",
)


def _counts_dict(counts) -> dict[str, Any]:
    return {p: {"reads": c.reads, "writes": c.writes, "bytes": c.bytes} for p, c in counts.items()}


def _delays_dict(d) -> dict[str, float]:
    return {
        "latency_ns": d.latency_ns,
        "congestion_ns": d.congestion_ns,
        "bandwidth_ns": d.bandwidth_ns,
        "total_ns": d.total_ns,
    }


def report_to_dict(report: SimReport) -> dict[str, Any]:
    epochs = []
    for e in report.epochs:
        epochs.append(
            {
                "window": {"index": e.window.index, "start_ns": e.window.start_ns, "end_ns": e.window.end_ns},
                "counts": _counts_dict(e.counts),
                "delays": _delays_dict(e.delays),
                "switch_bytes": dict(e.switch_bytes),
                "diagnostics": {
                    "samples": e.diagnostics.samples,
                    "llc_misses": e.diagnostics.llc_misses,
                    "l2_stalls": e.diagnostics.l2_stalls,
                },
            }
        )
    return {
        "meta": report.meta,
        "epochs": epochs,
        "totals": {
            "native_ns": report.clock.native_ns,
            "simulated_ns": report.clock.simulated_ns,
            "delay_ns": report.clock.delay_ns,
            "delays": _delays_dict(report.delays),
            "counts": _counts_dict(report.counts),
        },
        "truncated": report.truncated,
    }


def _encode(obj: Any) -> str:
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, Fraction):
        obj = float(obj)
    if isinstance(obj, float):
        if obj != obj or obj in (float("inf"), float("-inf")):
            raise ValueError(f"cannot serialize {obj}")
        text = f"{obj:.{FLOAT_DIGITS}f}"
        return "0.000" if text == "-0.000" else text
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Sorted keys, no whitespace, floats fixed to three decimals."""
    return _encode(obj)


def dumps_report(report: SimReport) -> str:
    report.check_additivity()
    return canonical_json(report_to_dict(report)) + "\n"


def write_report(report: SimReport, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_report(report))


def write_csv(report: SimReport, sink: IO[str]) -> None:
    def fmt(x) -> str:
        return f"{float(x):.{FLOAT_DIGITS}f}"

    w = csv.writer(sink, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in report.epochs:
        local = e.counts.get("LOCAL")
        local_ops = local.ops if local else 0
        remote_ops = sum(c.ops for c in e.counts.values()) - local_ops
        d = e.delays
        w.writerow(
            [
                e.window.index,
                e.window.start_ns,
                e.window.end_ns,
                fmt(d.latency_ns),
                fmt(d.congestion_ns),
                fmt(d.bandwidth_ns),
                fmt(d.total_ns),
                remote_ops,
                local_ops,
                e.diagnostics.samples,
                e.diagnostics.llc_misses,
                e.diagnostics.l2_stalls,
            ]
        )


@dataclass(frozen=True)
class RunConfig:
    topology_path: str
    trace_path: str
    policy: dict[str, Any]
    epoch_len_ns: int
    scale_with_counters: bool

    @property
    def sim_config(self) -> SimConfig:
        return SimConfig(self.epoch_len_ns, self.scale_with_counters)


def parse_run_config(doc: Any, base_dir: str = ".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    for key in ("topology", "trace", "policy"):
        if key not in doc:
            raise ConfigError(f"run config is missing {key!r}")
    epoch = doc.get("epoch_len_ns", SimConfig.epoch_len_ns)
    if isinstance(epoch, bool) or not isinstance(epoch, int) or epoch < 1:
        raise ConfigError("epoch_len_ns must be a positive integer")
    scale = doc.get("scale_with_counters", SimConfig.scale_with_counters)
    if not isinstance(scale, bool):
        raise ConfigError("scale_with_counters must be a boolean")
    return RunConfig(
        topology_path=os.path.join(base_dir, doc["topology"]),
        trace_path=os.path.join(base_dir, doc["trace"]),
        policy=doc["policy"],
        epoch_len_ns=epoch,
        scale_with_counters=scale,
    )


def load_run(config_path: str) -> tuple[Topology, Trace, PlacementPolicy, SimConfig]:
    """Load everything a simulation needs; paths in the config are relative to it."""
    with open(config_path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"run config is not valid JSON: {exc}") from None
    cfg = parse_run_config(doc, os.path.dirname(os.path.abspath(config_path)))
    topo = load_topology(cfg.topology_path)
    policy = policy_from_dict(cfg.policy)
    check_policy(policy, topo)
    trace = load_trace(cfg.trace_path)
    return topo, trace, policy, cfg.sim_config

