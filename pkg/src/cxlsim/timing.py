"""Epoch partitioning and per-epoch delay analysis.

Each epoch gets three delay components, computed in a fixed order:

* latency: remote ops times the (clamped) path-latency excess over local DRAM;
* congestion: FIFO serialization of accesses on every switch they traverse,
  each switch holding an access for its serial transmission time (STT);
* bandwidth: extra stretch needed so that no node on any path moves more
  bytes than its bandwidth allows over the epoch, after the first two delays
  have been added.

Replay and live runs share :class:`EpochEngine`, so their results agree by
construction.

Latency, bandwidth and the epoch totals are exact rationals (``Fraction``);
floats appear only when a report is serialized. Congestion is computed in
floating point, which is exact for the integer timestamps and STTs typical of
configs and monotone either way.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Any, Callable, Iterable, Mapping, Sequence

from . import __version__
from .errors import CxlSimError
from .placement import (
    LOCAL,
    AllocationMap,
    OpCount,
    PlacementPolicy,
    PoolCounts,
    multiply_counts,
    policy_to_dict,
    scale_counts,
)
from .topology import POOL, Topology, resolve_path, switches_on_path
from .trace import Access, Alloc, Collector, Counters, Free, Trace, TraceEvent

log = logging.getLogger(__name__)

DEFAULT_EPOCH_NS = 10_000_000


class SimulationError(CxlSimError):
    pass


@dataclass(frozen=True)
class EpochWindow:
    index: int
    start_ns: int
    end_ns: int

    @property
    def length_ns(self) -> int:
        return self.end_ns - self.start_ns


@dataclass(frozen=True)
class DelayBreakdown:
    latency_ns: Real = 0
    congestion_ns: Real = 0
    bandwidth_ns: Real = 0

    @property
    def total_ns(self) -> Real:
        return self.latency_ns + self.congestion_ns + self.bandwidth_ns


@dataclass(frozen=True)
class SimClock:
    native_ns: int = 0
    simulated_ns: Real = 0
    delay_ns: Real = 0


@dataclass(frozen=True)
class Diagnostics:
    samples: int = 0
    llc_misses: int = 0
    l2_stalls: int = 0


@dataclass
class EpochResult:
    window: EpochWindow
    counts: PoolCounts
    delays: DelayBreakdown
    switch_bytes: dict[str, int]
    diagnostics: Diagnostics


@dataclass(frozen=True)
class SimConfig:
    epoch_len_ns: int = DEFAULT_EPOCH_NS
    scale_with_counters: bool = True

    def __post_init__(self) -> None:
        if self.epoch_len_ns < 1:
            raise ValueError("epoch_len_ns must be >= 1")


@dataclass
class SimReport:
    meta: dict[str, Any]
    epochs: list[EpochResult] = field(default_factory=list)
    clock: SimClock = field(default_factory=SimClock)
    truncated: bool = False

    @property
    def delays(self) -> DelayBreakdown:
        lat = cong = bw = 0
        for e in self.epochs:
            lat += e.delays.latency_ns
            cong += e.delays.congestion_ns
            bw += e.delays.bandwidth_ns
        return DelayBreakdown(lat, cong, bw)

    @property
    def counts(self) -> PoolCounts:
        agg: PoolCounts = {}
        for e in self.epochs:
            for pool, c in e.counts.items():
                a = agg.setdefault(pool, OpCount())
                a.reads += c.reads
                a.writes += c.writes
                a.bytes += c.bytes
        return dict(sorted(agg.items()))

    def check_additivity(self) -> None:
        delay = sum(e.delays.total_ns for e in self.epochs)
        native = sum(e.window.length_ns for e in self.epochs)
        if (delay, native, native + delay) != (
            self.clock.delay_ns,
            self.clock.native_ns,
            self.clock.simulated_ns,
        ):
            raise SimulationError("report totals do not match the sum of its epochs")


# -- pure analyzers ------------------------------------------------------------


def partition_epochs(trace_span_ns: int, epoch_len_ns: int) -> list[EpochWindow]:
    if epoch_len_ns < 1:
        raise ValueError("epoch_len_ns must be >= 1")
    n = -(-trace_span_ns // epoch_len_ns) if trace_span_ns > 0 else 0
    return [
        EpochWindow(i, i * epoch_len_ns, min((i + 1) * epoch_len_ns, trace_span_ns))
        for i in range(n)
    ]


def latency_excess(topo: Topology, pool: str) -> tuple[Fraction, Fraction]:
    """Exact (read, write) path latency above local DRAM, clamped at zero."""
    path = resolve_path(topo, pool)
    local = Fraction(topo.local_latency_ns)
    nodes = [topo.nodes[h] for h in path.hops]
    read = sum((Fraction(n.latency_ns) for n in nodes), Fraction(0))
    write = sum((Fraction(n.effective_write_latency_ns) for n in nodes), Fraction(0))
    return max(Fraction(0), read - local), max(Fraction(0), write - local)


def latency_delay(
    counts: Mapping[str, OpCount],
    topo: Topology,
    excess: Mapping[str, tuple[Fraction, Fraction]] | None = None,
) -> Fraction:
    """Remote ops times how much slower their pool is than local DRAM (never negative)."""
    total = Fraction(0)
    for pool, c in counts.items():
        if pool == LOCAL:
            continue
        if excess is not None and pool in excess:
            read_excess, write_excess = excess[pool]
        else:
            read_excess, write_excess = latency_excess(topo, pool)
        total += c.reads * read_excess + c.writes * write_excess
    return total


def congestion_route(topo: Topology, pool: str) -> tuple[tuple[str, float], ...]:
    """(node, stt) pairs an access to ``pool`` occupies, root first."""
    if pool == LOCAL:
        return ()
    route = [(nid, topo.nodes[nid].stt_ns) for nid in switches_on_path(topo, pool)]
    if topo.nodes[pool].stt_ns > 0:
        route.append((pool, topo.nodes[pool].stt_ns))
    return tuple(route)


def congestion_delay(
    accesses: Sequence[tuple[int, str]],
    topo: Topology,
    routes: Mapping[str, tuple[tuple[str, float], ...]] | None = None,
) -> tuple[float, list[float]]:
    """Serialize ``(ts_ns, pool)`` accesses FIFO on every switch they cross.

    Returns the summed delay and each access's release time. Accesses to LOCAL
    cross nothing and are released at their own timestamp.
    """
    if routes is None:
        routes = {}
    else:
        routes = dict(routes)
    busy: dict[str, float] = {}
    releases: list[float] = []
    total = 0.0
    for ts, pool in accesses:
        route = routes.get(pool)
        if route is None:
            route = routes[pool] = congestion_route(topo, pool)
        r = ts
        for nid, _ in route:
            b = busy.get(nid)
            if b is not None and b > r:
                r = b
        for nid, stt in route:
            busy[nid] = r + stt
        total += r - ts
        releases.append(r)
    return total, releases


def required_transfer_ns(node_bytes: Mapping[str, int], topo: Topology) -> Fraction:
    """Longest time any node needs to move its bytes at its bandwidth."""
    worst = Fraction(0)
    for nid, nbytes in node_bytes.items():
        t = Fraction(nbytes) / Fraction(topo.node(nid).bandwidth_bytes_per_ns)
        if t > worst:
            worst = t
    return worst


def bandwidth_delay(
    switch_bytes: Mapping[str, int], elapsed_with_prior_delays_ns: Real, topo: Topology
) -> Fraction:
    """Bottleneck excess: max over nodes of ``bytes / bandwidth - elapsed``, floored at 0."""
    if not elapsed_with_prior_delays_ns > 0:
        raise ValueError("elapsed time must be positive")
    return max(Fraction(0), required_transfer_ns(switch_bytes, topo) - Fraction(elapsed_with_prior_delays_ns))


def settle_delays(window_ns: int, latency_ns: Real, congestion_ns: Real, node_bytes: Mapping[str, int], topo: Topology) -> DelayBreakdown:
    latency = Fraction(latency_ns)
    congestion = Fraction(congestion_ns)
    elapsed = window_ns + latency + congestion
    if node_bytes and elapsed > 0:
        bw = bandwidth_delay(node_bytes, elapsed, topo)
    else:
        bw = Fraction(0)
    return DelayBreakdown(latency, congestion, bw)


# -- engine ------------------------------------------------------------------


class EpochEngine:
    """Incremental epoch state machine fed with timestamp-ordered events."""

    def __init__(
        self,
        topo: Topology,
        policy: PlacementPolicy,
        cfg: SimConfig,
        sample_period: int = 1,
        on_epoch: Callable[[EpochResult], None] | None = None,
    ):
        self.topo = topo
        self.cfg = cfg
        self.sample_period = sample_period
        self.amap = AllocationMap(policy, topo)
        self.on_epoch = on_epoch
        self.epochs: list[EpochResult] = []
        self._routes = {p: congestion_route(topo, p) for p in topo.pools}
        self._routes[LOCAL] = ()
        self._hops = {p: resolve_path(topo, p).hops for p in topo.pools}
        self._excess = {p: latency_excess(topo, p) for p in topo.pools}
        self._last_ts: int | None = None
        self._index = 0
        self._start = 0
        self._end = cfg.epoch_len_ns
        self._reset_window()

    def _reset_window(self) -> None:
        self._accesses: list[tuple[int, str]] = []
        self._counts: dict[str, list[int]] = {}
        self._llc = 0
        self._l2 = 0
        self._n_ctr = 0

    def feed(self, events: Iterable[TraceEvent]) -> None:
        lookup = self.amap.lookup
        accesses = self._accesses
        counts = self._counts
        end = self._end
        last = self._last_ts
        for ev in events:
            ts = ev.ts_ns
            if last is not None and ts < last:
                raise SimulationError(f"timestamp regression at ts {ts}")
            last = ts
            if ts >= end:
                self._last_ts = last
                while ts >= self._end:
                    self._close(self._end)
                end = self._end
                accesses = self._accesses
                counts = self._counts
            if type(ev) is Access:
                pool = lookup(ev.addr)
                accesses.append((ts, pool))
                c = counts.get(pool)
                if c is None:
                    c = counts[pool] = [0, 0, 0]
                c[1 if ev.is_write else 0] += 1
                c[2] += ev.size_bytes
            elif type(ev) is Counters:
                self._llc += ev.llc_misses
                self._l2 += ev.l2_stalls_cycles
                self._n_ctr += 1
            elif type(ev) is Alloc or type(ev) is Free:
                try:
                    self.amap.apply(ev)
                except CxlSimError as exc:
                    raise SimulationError(f"at ts {ts}: {exc}") from exc
            else:
                raise SimulationError(f"unsupported event {ev!r}")
        self._last_ts = last

    def finish(self) -> None:
        """Close the window holding the last event; it ends right after that event."""
        if self._last_ts is not None and self._last_ts >= self._start:
            self._close(self._last_ts + 1)

    def _close(self, end: int) -> None:
        topo = self.topo
        window = EpochWindow(self._index, self._start, end)
        sampled = {p: OpCount(*c) for p, c in sorted(self._counts.items())}
        diag = Diagnostics(len(self._accesses), self._llc, self._l2)
        if self.cfg.scale_with_counters and self._n_ctr:
            counts = scale_counts(sampled, self._llc)
        elif self.sample_period > 1:
            counts = multiply_counts(sampled, self.sample_period)
        else:
            counts = sampled

        lat = latency_delay(counts, topo, self._excess)
        cong, _ = congestion_delay(self._accesses, topo, self._routes)
        node_bytes: dict[str, int] = {}
        for pool, c in counts.items():
            if pool == LOCAL or not c.bytes:
                continue
            for nid in self._hops[pool]:
                node_bytes[nid] = node_bytes.get(nid, 0) + c.bytes
        delays = settle_delays(window.length_ns, lat, cong, node_bytes, topo)
        switch_bytes = {k: v for k, v in sorted(node_bytes.items()) if topo.nodes[k].kind != POOL}

        result = EpochResult(window, counts, delays, switch_bytes, diag)
        self.epochs.append(result)
        if self.on_epoch is not None:
            self.on_epoch(result)
        self._index += 1
        self._start = end
        self._end = end + self.cfg.epoch_len_ns
        self._reset_window()

    def report(self, meta: dict[str, Any], truncated: bool = False) -> SimReport:
        delay = sum((e.delays.total_ns for e in self.epochs), Fraction(0))
        native = self.epochs[-1].window.end_ns if self.epochs else 0
        clock = SimClock(native, native + delay, delay)
        return SimReport(meta, list(self.epochs), clock, truncated)


def run_meta(topo: Topology, policy: PlacementPolicy, cfg: SimConfig) -> dict[str, Any]:
    return {
        "topology_digest": topo.digest(),
        "policy": policy_to_dict(policy),
        "config": {"epoch_len_ns": cfg.epoch_len_ns, "scale_with_counters": cfg.scale_with_counters},
        "version": __version__,
    }


def run_replay(trace: Trace, topo: Topology, policy: PlacementPolicy, cfg: SimConfig | None = None) -> SimReport:
    """Replay a recorded trace and return the per-epoch report."""
    cfg = cfg or SimConfig()
    engine = EpochEngine(topo, policy, cfg, trace.sample_period)
    engine.feed(trace.events)
    engine.finish()
    return engine.report(run_meta(topo, policy, cfg))


def run_live(
    collector: Collector,
    topo: Topology,
    policy: PlacementPolicy,
    cfg: SimConfig | None = None,
    stall: Callable[[float], None] | None = None,
) -> SimReport:
    """Drive the engine from a started collector.

    After each epoch closes, ``stall`` is called with that epoch's total delay;
    a real host probe pauses the target for that long. If the collector fails,
    the epochs completed so far are returned with ``truncated`` set.
    """
    cfg = cfg or SimConfig()
    on_epoch = (lambda r: stall(r.delays.total_ns)) if stall is not None else None
    engine = EpochEngine(topo, policy, cfg, getattr(collector, "sample_period", 1), on_epoch)
    meta = run_meta(topo, policy, cfg)
    while True:
        try:
            batch = collector.poll()
        except Exception as exc:
            return _truncated(engine, meta, exc)
        engine.feed(batch)
        if not batch and collector.exhausted:
            break
    try:
        final = collector.stop()
    except Exception as exc:
        return _truncated(engine, meta, exc)
    engine.feed(final)
    engine.finish()
    return engine.report(meta)


def _truncated(engine: EpochEngine, meta: dict[str, Any], exc: Exception) -> SimReport:
    log.warning("collector failed after %d epochs: %s", len(engine.epochs), exc)
    return engine.report(meta, truncated=True)
