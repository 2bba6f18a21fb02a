"""Normalized memory-event traces.

A trace is a timestamp-ordered stream of allocation, free, sampled access and
counter events. On disk it is JSONL with a one-line header::

    {"v":1,"sample_period":1,"cacheline_bytes":64}
    {"ts":0,"ev":"alloc","addr":268435456,"size":4096,"mech":"mmap"}
    {"ts":100,"ev":"access","addr":268435456,"w":true,"size":64}
"""

from __future__ import annotations

import io
import json
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Protocol, Sequence, Union

from .errors import CollectorError, TraceFormatError

MECHANISMS = ("mmap", "brk", "sbrk", "other")
FORMAT_VERSION = 1

# Base of the synthetic working set, chosen to look like an mmap'd region.
SYNTH_BASE_ADDR = 0x10000000


@dataclass(frozen=True, slots=True)
class Alloc:
    ts_ns: int
    addr: int
    size_bytes: int
    mechanism: str = "mmap"


@dataclass(frozen=True, slots=True)
class Free:
    ts_ns: int
    addr: int
    size_bytes: int


@dataclass(frozen=True, slots=True)
class Access:
    ts_ns: int
    addr: int
    is_write: bool = False
    size_bytes: int = 64


@dataclass(frozen=True, slots=True)
class Counters:
    ts_ns: int
    llc_misses: int = 0
    l2_stalls_cycles: int = 0
    instructions: int = 0


TraceEvent = Union[Alloc, Free, Access, Counters]


def check_event(ev: TraceEvent) -> None:
    if ev.ts_ns < 0:
        raise ValueError(f"negative timestamp {ev.ts_ns}")
    if isinstance(ev, (Alloc, Free, Access)):
        if ev.addr < 0:
            raise ValueError(f"negative address {ev.addr}")
        if ev.size_bytes <= 0:
            raise ValueError(f"size must be positive, got {ev.size_bytes}")
        if isinstance(ev, Alloc) and ev.mechanism not in MECHANISMS:
            raise ValueError(f"unknown allocation mechanism {ev.mechanism!r}")
    elif isinstance(ev, Counters):
        if min(ev.llc_misses, ev.l2_stalls_cycles, ev.instructions) < 0:
            raise ValueError("counters must be non-negative")
    else:
        raise TypeError(f"not a trace event: {ev!r}")


@dataclass(frozen=True)
class Trace:
    events: tuple[TraceEvent, ...] = ()
    sample_period: int = 1
    cacheline_bytes: int = 64

    def __post_init__(self) -> None:
        if not isinstance(self.events, tuple):
            object.__setattr__(self, "events", tuple(self.events))
        if self.sample_period < 1:
            raise ValueError("sample_period must be >= 1")
        cl = self.cacheline_bytes
        if cl < 1 or cl & (cl - 1):
            raise ValueError("cacheline_bytes must be a power of two")
        prev = 0
        for i, ev in enumerate(self.events):
            if ev.ts_ns < prev:
                raise ValueError(f"timestamp regression at event {i}")
            prev = ev.ts_ns

    def __len__(self) -> int:
        return len(self.events)

    @property
    def span_ns(self) -> int:
        """Native duration covered: last timestamp + 1, or 0 when empty."""
        return self.events[-1].ts_ns + 1 if self.events else 0


# -- JSONL serialization -----------------------------------------------------


def event_to_dict(ev: TraceEvent) -> dict:
    if isinstance(ev, Access):
        return {"ts": ev.ts_ns, "ev": "access", "addr": ev.addr, "w": ev.is_write, "size": ev.size_bytes}
    if isinstance(ev, Alloc):
        return {"ts": ev.ts_ns, "ev": "alloc", "addr": ev.addr, "size": ev.size_bytes, "mech": ev.mechanism}
    if isinstance(ev, Free):
        return {"ts": ev.ts_ns, "ev": "free", "addr": ev.addr, "size": ev.size_bytes}
    return {
        "ts": ev.ts_ns,
        "ev": "ctr",
        "llc_miss": ev.llc_misses,
        "l2_stall": ev.l2_stalls_cycles,
        "instr": ev.instructions,
    }


def _int(rec: dict, key: str, lineno: int, default: int | None = None) -> int:
    value = rec.get(key, default)
    if value is None:
        raise TraceFormatError(f"missing field {key!r}", lineno)
    if isinstance(value, bool) or not isinstance(value, int):
        raise TraceFormatError(f"field {key!r} must be an integer", lineno)
    return value


def event_from_dict(rec: dict, lineno: int, cacheline_bytes: int = 64) -> TraceEvent:
    kind = rec.get("ev")
    ts = _int(rec, "ts", lineno)
    if kind == "access":
        w = rec.get("w", False)
        if not isinstance(w, bool):
            raise TraceFormatError("field 'w' must be a boolean", lineno)
        ev: TraceEvent = Access(ts, _int(rec, "addr", lineno), w, _int(rec, "size", lineno, cacheline_bytes))
    elif kind == "alloc":
        mech = rec.get("mech", "other")
        ev = Alloc(ts, _int(rec, "addr", lineno), _int(rec, "size", lineno), mech)
    elif kind == "free":
        ev = Free(ts, _int(rec, "addr", lineno), _int(rec, "size", lineno))
    elif kind == "ctr":
        ev = Counters(
            ts,
            _int(rec, "llc_miss", lineno, 0),
            _int(rec, "l2_stall", lineno, 0),
            _int(rec, "instr", lineno, 0),
        )
    else:
        raise TraceFormatError(f"unknown event kind {kind!r}", lineno)
    try:
        check_event(ev)
    except ValueError as exc:
        raise TraceFormatError(str(exc), lineno) from None
    return ev


def read_trace(source: Iterable[str] | Iterable[bytes] | IO) -> Trace:
    """Parse a JSONL trace from a text or binary stream (or any iterable of lines).

    Out-of-order timestamps are rejected rather than sorted.
    """
    lines: Iterator = iter(source)
    header = None
    lineno = 0
    for raw in lines:
        lineno += 1
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if line.strip():
            header = line
            break
    if header is None:
        raise TraceFormatError("missing header")
    try:
        head = json.loads(header)
    except json.JSONDecodeError:
        raise TraceFormatError("malformed header", lineno) from None
    if not isinstance(head, dict) or "ev" in head or "sample_period" not in head:
        raise TraceFormatError("missing header", lineno)
    if head.get("v", FORMAT_VERSION) != FORMAT_VERSION:
        raise TraceFormatError(f"unsupported trace version {head.get('v')!r}", lineno)
    sample_period = _int(head, "sample_period", lineno)
    cacheline = _int(head, "cacheline_bytes", lineno, 64)
    if sample_period < 1:
        raise TraceFormatError("sample_period must be >= 1", lineno)
    if cacheline < 1 or cacheline & (cacheline - 1):
        raise TraceFormatError("cacheline_bytes must be a power of two", lineno)

    events: list[TraceEvent] = []
    prev_ts = 0
    loads = json.loads
    for raw in lines:
        lineno += 1
        line = raw.decode("utf-8") if isinstance(raw, bytes) else raw
        if not line.strip():
            continue
        try:
            rec = loads(line)
        except json.JSONDecodeError:
            raise TraceFormatError("malformed line", lineno) from None
        if not isinstance(rec, dict):
            raise TraceFormatError("malformed line", lineno)
        ev = event_from_dict(rec, lineno, cacheline)
        if ev.ts_ns < prev_ts:
            raise TraceFormatError("timestamp regression", lineno)
        prev_ts = ev.ts_ns
        events.append(ev)
    return Trace(tuple(events), sample_period, cacheline)


def write_trace(trace: Trace, sink: IO) -> None:
    """Write ``trace`` as JSONL; ``sink`` may be a text or binary stream."""
    header = {"v": FORMAT_VERSION, "sample_period": trace.sample_period, "cacheline_bytes": trace.cacheline_bytes}
    dumps = json.JSONEncoder(separators=(",", ":")).encode
    chunks = [dumps(header)]
    chunks.extend(dumps(event_to_dict(ev)) for ev in trace.events)
    text = "\n".join(chunks) + "\n"
    if isinstance(sink, io.TextIOBase):
        sink.write(text)
    else:
        sink.write(text.encode("utf-8"))


def load_trace(path: str) -> Trace:
    with open(path, "rb") as fh:
        return read_trace(fh)


def save_trace(trace: Trace, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        write_trace(trace, fh)


# -- synthetic traces ----------------------------------------------------------

PATTERNS = ("sequential", "uniform_random", "hotspot")


@dataclass(frozen=True)
class SynthSpec:
    pattern: str = "sequential"
    ops: int = 1000
    working_set_bytes: int = 1 << 20
    inter_arrival_ns: int = 100
    write_fraction: float = 0.0
    seed: int = 0
    cacheline_bytes: int = 64
    # hotspot: this share of accesses lands in the first hot_fraction of the range
    hot_fraction: float = 0.1
    hot_probability: float = 0.9

    def validate(self) -> None:
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}; expected one of {PATTERNS}")
        if self.ops < 1:
            raise ValueError("ops must be positive")
        cl = self.cacheline_bytes
        if cl < 1 or cl & (cl - 1):
            raise ValueError("cacheline_bytes must be a power of two")
        if self.working_set_bytes < cl:
            raise ValueError("working set is smaller than one cache line")
        if self.inter_arrival_ns < 1:
            raise ValueError("inter_arrival_ns must be positive")
        if not 0.0 <= self.write_fraction <= 1.0:
            raise ValueError("write_fraction must be in [0, 1]")
        if not 0.0 < self.hot_fraction <= 1.0 or not 0.0 <= self.hot_probability <= 1.0:
            raise ValueError("hotspot parameters out of range")


def synth_trace(spec: SynthSpec) -> Trace:
    """Deterministic synthetic trace: one Alloc at ts 0, then ``spec.ops`` accesses.

    Accesses are cache-line sized and aligned, spaced ``inter_arrival_ns`` apart
    starting at ``inter_arrival_ns``.
    """
    spec.validate()
    rng = random.Random(spec.seed)
    cl = spec.cacheline_bytes
    lines = spec.working_set_bytes // cl
    hot_lines = max(1, int(lines * spec.hot_fraction))
    base = SYNTH_BASE_ADDR
    wf = spec.write_fraction

    events: list[TraceEvent] = [Alloc(0, base, spec.working_set_bytes, "mmap")]
    rand = rng.random
    randrange = rng.randrange
    for i in range(spec.ops):
        if spec.pattern == "sequential":
            line = i % lines
        elif spec.pattern == "uniform_random":
            line = randrange(lines)
        elif rand() < spec.hot_probability:
            line = randrange(hot_lines)
        else:
            line = randrange(lines)
        is_write = wf >= 1.0 or (wf > 0.0 and rand() < wf)
        events.append(Access((i + 1) * spec.inter_arrival_ns, base + line * cl, is_write, cl))
    return Trace(tuple(events), 1, cl)


# -- collectors --------------------------------------------------------------


class Collector(Protocol):
    """Live event source.

    ``poll`` returns whatever is ready without blocking indefinitely; batches
    are jointly timestamp-ordered. ``exhausted`` turns true once the producer
    has nothing more to deliver (target exited). ``stop`` returns the final
    batch.
    """

    exhausted: bool

    def start(self) -> None: ...

    def poll(self) -> Sequence[TraceEvent]: ...

    def stop(self) -> Sequence[TraceEvent]: ...


@dataclass
class MockCollector:
    """Replays a recorded trace in fixed-size batches."""

    trace: Trace
    batch_size: int = 64
    _pos: int = field(default=0, init=False)
    _started: bool = field(default=False, init=False)
    _stopped: bool = field(default=False, init=False)

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def exhausted(self) -> bool:
        return self._pos >= len(self.trace.events)

    @property
    def sample_period(self) -> int:
        return self.trace.sample_period

    def start(self) -> None:
        self._started = True

    def poll(self) -> list[TraceEvent]:
        if self._stopped:
            raise CollectorError("poll after stop")
        batch = self.trace.events[self._pos : self._pos + self.batch_size]
        self._pos += len(batch)
        return list(batch)

    def stop(self) -> list[TraceEvent]:
        if self._stopped:
            raise CollectorError("collector already stopped")
        self._stopped = True
        rest = self.trace.events[self._pos :]
        self._pos = len(self.trace.events)
        return list(rest)


def mock_collector(trace: Trace, batch_size: int = 64) -> MockCollector:
    col = MockCollector(trace, batch_size)
    col.start()
    return col
