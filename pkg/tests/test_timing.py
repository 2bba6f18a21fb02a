import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cxlsim.errors import CollectorError, UnknownNodeError
from cxlsim.placement import LOCAL, AllLocal, OpCount, RoundRobin
from cxlsim.timing import (
    DelayBreakdown,
    EpochWindow,
    SimConfig,
    bandwidth_delay,
    congestion_delay,
    latency_delay,
    partition_epochs,
    run_live,
    run_replay,
    settle_delays,
)
from cxlsim.topology import parse_topology
from cxlsim.trace import Access, Alloc, Counters, SynthSpec, Trace, mock_collector, synth_trace
from oracles import congestion_bruteforce, congestion_des, random_topology, random_trace, replay_oracle


def one_switch(stt, bw=16.0):
    return parse_topology(
        json.dumps(
            {
                "local_latency_ns": 88.9,
                "nodes": [
                    {"id": "RC", "kind": "root_complex", "latency_ns": 20, "bandwidth_gbps": 1e9, "stt_ns": 0, "children": ["S1"]},
                    {"id": "S1", "kind": "switch", "latency_ns": 50, "bandwidth_gbps": bw, "stt_ns": stt, "children": ["P1"]},
                    {"id": "P1", "kind": "pool", "latency_ns": 180, "bandwidth_gbps": 1e9, "children": []},
                ],
            }
        )
    )


# -- partition ------------------------------------------------------------------


def test_partition_epochs():
    w = partition_epochs(25_000_000, 10_000_000)
    assert len(w) == 3
    assert w[-1] == EpochWindow(2, 20_000_000, 25_000_000)
    assert partition_epochs(10_000_000, 10_000_000) == [EpochWindow(0, 0, 10_000_000)]
    assert partition_epochs(0, 10) == []
    with pytest.raises(ValueError):
        partition_epochs(10, 0)


@given(st.integers(0, 10**6), st.integers(100, 10**5))
@settings(deadline=None)
def test_partition_tiles(span, length):
    w = partition_epochs(span, length)
    assert len(w) == -(-span // length)
    if w:
        assert w[0].start_ns == 0 and w[-1].end_ns == span
    for a, b in zip(w, w[1:]):
        assert a.end_ns == b.start_ns and a.length_ns == length


# -- latency --------------------------------------------------------------------


def test_latency_example(topo_250):
    assert latency_delay({"P1": OpCount(1000, 0, 64_000)}, topo_250) == pytest.approx(161_100, rel=1e-12)


def test_latency_local_is_free(fixture_topo):
    assert latency_delay({LOCAL: OpCount(500, 500, 64_000)}, fixture_topo) == 0


def test_latency_clamps_fast_pools():
    topo = parse_topology(json.dumps({
        "local_latency_ns": 88.9,
        "nodes": [
            {"id": "RC", "kind": "root_complex", "latency_ns": 0, "bandwidth_gbps": 16, "children": ["P"]},
            {"id": "P", "kind": "pool", "latency_ns": 80, "bandwidth_gbps": 16, "children": []},
        ],
    }))
    assert latency_delay({"P": OpCount(1000, 10, 0)}, topo) == 0


def test_latency_uses_write_override():
    topo = parse_topology(json.dumps({
        "local_latency_ns": 100,
        "nodes": [
            {"id": "RC", "kind": "root_complex", "latency_ns": 0, "bandwidth_gbps": 16, "children": ["P"]},
            {"id": "P", "kind": "pool", "latency_ns": 150, "write_latency_ns": 300, "bandwidth_gbps": 16, "children": []},
        ],
    }))
    assert latency_delay({"P": OpCount(2, 3, 0)}, topo) == 2 * 50 + 3 * 200


def test_latency_unknown_pool(fixture_topo):
    with pytest.raises(UnknownNodeError):
        latency_delay({"P9": OpCount(1, 0, 64)}, fixture_topo)


# -- congestion -----------------------------------------------------------------


def test_congestion_examples():
    topo = one_switch(100)
    total, rel = congestion_delay([(0, "P1"), (60, "P1")], topo)
    assert (total, rel) == (40, [0, 100])
    assert congestion_delay([(0, "P1"), (150, "P1")], topo)[0] == 0
    total, rel = congestion_delay([(0, "P1"), (10, "P1"), (20, "P1")], topo)
    assert [r - t for r, t in zip(rel, (0, 10, 20))] == [0, 90, 180]
    assert total == 270


def test_congestion_local_and_disjoint_switches():
    topo = parse_topology(json.dumps({
        "local_latency_ns": 88.9,
        "nodes": [
            {"id": "RC", "kind": "root_complex", "latency_ns": 0, "bandwidth_gbps": 64, "stt_ns": 0, "children": ["S1", "S2"]},
            {"id": "S1", "kind": "switch", "latency_ns": 0, "bandwidth_gbps": 16, "stt_ns": 100, "children": ["P1"]},
            {"id": "S2", "kind": "switch", "latency_ns": 0, "bandwidth_gbps": 16, "stt_ns": 100, "children": ["P2"]},
            {"id": "P1", "kind": "pool", "latency_ns": 0, "bandwidth_gbps": 16, "children": []},
            {"id": "P2", "kind": "pool", "latency_ns": 0, "bandwidth_gbps": 16, "children": []},
        ],
    }))
    assert congestion_delay([(0, "P1"), (1, "P2"), (2, LOCAL), (3, LOCAL)], topo)[0] == 0


def test_congestion_pool_stt():
    topo = parse_topology(json.dumps({
        "local_latency_ns": 88.9,
        "nodes": [
            {"id": "RC", "kind": "root_complex", "latency_ns": 0, "bandwidth_gbps": 64, "children": ["P"]},
            {"id": "P", "kind": "pool", "latency_ns": 0, "bandwidth_gbps": 16, "stt_ns": 30, "children": []},
        ],
    }))
    assert congestion_delay([(0, "P"), (10, "P")], topo)[0] == 20


@pytest.mark.parametrize("n", [2, 5, 40, 300])
def test_single_switch_closed_form(n):
    rng = random.Random(n)
    stt = 100
    ts = sorted(rng.randrange(stt) for _ in range(n))
    ts[0] = 0
    total, _ = congestion_delay([(t, "P1") for t in ts], one_switch(stt))
    assert total == sum(max(0, i * stt - (ts[i] - ts[0])) for i in range(n))


@given(st.integers(0, 2**32), st.integers(0, 120))
@settings(max_examples=150, deadline=None)
def test_congestion_matches_bruteforce(seed, n):
    rng = random.Random(seed)
    topo = random_topology(rng)
    pools = topo.pools + [LOCAL]
    ts = 0
    acc = []
    for _ in range(n):
        ts += rng.choice([0, 1, 5, 30])
        acc.append((ts, rng.choice(pools)))
    got = congestion_delay(acc, topo)
    assert got == congestion_bruteforce(acc, topo)
    assert got == congestion_des(acc, topo)


# -- bandwidth ------------------------------------------------------------------


def test_bandwidth_examples():
    topo = one_switch(0, bw=16)
    assert bandwidth_delay({"S1": 64_000}, 1000, topo) == 3000
    assert bandwidth_delay({"S1": 8_000}, 1000, topo) == 0
    two = parse_topology(json.dumps({
        "local_latency_ns": 88.9,
        "nodes": [
            {"id": "RC", "kind": "root_complex", "latency_ns": 0, "bandwidth_gbps": 1000, "children": ["S1", "S2"]},
            {"id": "S1", "kind": "switch", "latency_ns": 0, "bandwidth_gbps": 16, "children": ["P1"]},
            {"id": "S2", "kind": "switch", "latency_ns": 0, "bandwidth_gbps": 8, "children": ["P2"]},
            {"id": "P1", "kind": "pool", "latency_ns": 0, "bandwidth_gbps": 16, "children": []},
            {"id": "P2", "kind": "pool", "latency_ns": 0, "bandwidth_gbps": 16, "children": []},
        ],
    }))
    # S1 excess 4000 - 1000 = 3000, S2 excess 16000 / 8 - 1000 = 1000
    assert bandwidth_delay({"S1": 64_000, "S2": 16_000}, 1000, two) == 3000


def test_bandwidth_errors(fixture_topo):
    with pytest.raises(UnknownNodeError):
        bandwidth_delay({"S9": 1}, 1, fixture_topo)
    with pytest.raises(ValueError):
        bandwidth_delay({"S1": 1}, 0, fixture_topo)


finite = st.floats(0, 1e12, allow_nan=False, allow_infinity=False)


@given(st.integers(1, 10**10), finite, finite, st.integers(0, 10**12), st.floats(0.01, 1e3))
def test_settle_delays_properties(window, lat, cong, nbytes, bw):
    topo = one_switch(0, bw=bw)
    d = settle_delays(window, lat, cong, {"S1": nbytes}, topo)
    assert d.bandwidth_ns >= 0
    assert d.total_ns == d.latency_ns + d.congestion_ns + d.bandwidth_ns
    floor = Fraction(nbytes) / Fraction(bw)
    assert window + d.total_ns >= floor
    elapsed = window + Fraction(lat) + Fraction(cong)
    if floor <= elapsed:
        assert d.bandwidth_ns == 0
    else:
        assert window + d.total_ns == floor
    assert d.bandwidth_ns == bandwidth_delay({"S1": nbytes}, elapsed, topo)


# -- replay ---------------------------------------------------------------------


def test_all_local_control():
    t = synth_trace(SynthSpec("sequential", 5000, 1 << 16, 50, 0.5, 1))
    topo = random_topology(random.Random(3))
    r = run_replay(t, topo, AllLocal(), SimConfig(10_000))
    assert r.clock.simulated_ns == r.clock.native_ns == t.span_ns
    assert all(e.delays == DelayBreakdown() for e in r.epochs)


def test_latency_only_composition(topo_250):
    events = [Alloc(0, 0x1000, 1 << 20)] + [Access(i, 0x1000 + 64 * i) for i in range(1000)]
    r = run_replay(Trace(tuple(events)), topo_250, RoundRobin(("P1",)), SimConfig(1000))
    assert len(r.epochs) == 1
    d = r.epochs[0].delays
    assert d.latency_ns == pytest.approx(161_100, rel=1e-12)
    assert d.congestion_ns == 0 and d.bandwidth_ns == 0
    assert r.clock.simulated_ns == pytest.approx(1000 + 161_100, rel=1e-12)


def composite_trace():
    return Trace((
        Alloc(0, 0x0, 1 << 20),
        Access(0, 0x0, False, 16_000),
        Access(10, 0x4000, False, 16_000),
        Access(20, 0x8000, True, 16_000),
    ))


def test_composite_scenario():
    topo = one_switch(100, bw=16)
    t = composite_trace()
    r = run_replay(t, topo, RoundRobin(("P1",)), SimConfig(1000))
    (e,) = r.epochs
    assert e.delays.latency_ns == pytest.approx(3 * 161.1, rel=1e-12)
    assert e.delays.congestion_ns == 270
    # 48,000 bytes over 16 B/ns needs 3000 ns; window is 21 ns
    assert e.delays.bandwidth_ns == pytest.approx(3000 - 21 - 3 * 161.1 - 270, rel=1e-12)
    assert e.delays.total_ns == pytest.approx(3000 - 21, rel=1e-12)
    ((lat, cong, bw),) = replay_oracle(t, topo, ["P1"], 1000)
    assert e.delays.total_ns == lat + cong + bw


@given(st.integers(0, 2**32))
@settings(max_examples=40, deadline=None)
def test_replay_matches_event_oracle(seed):
    rng = random.Random(seed)
    topo = random_topology(rng)
    t = random_trace(rng, rng.randint(0, 400), sample_period=rng.choice([1, 1, 4]))
    pools = rng.sample(topo.pools, rng.randint(1, len(topo.pools)))
    epoch = rng.choice([50, 300, 2000, 10**6])
    r = run_replay(t, topo, RoundRobin(tuple(pools)), SimConfig(epoch, scale_with_counters=False))
    expected = replay_oracle(t, topo, pools, epoch)
    assert len(r.epochs) == len(expected)
    for e, (lat, cong, bw) in zip(r.epochs, expected):
        assert (e.delays.latency_ns, e.delays.congestion_ns, e.delays.bandwidth_ns) == (lat, cong, bw)


def test_epoch_boundary_event_belongs_to_later_epoch(fixture_topo):
    t = Trace((Alloc(0, 0, 4096), Access(999, 0), Access(1000, 64), Access(1500, 128)))
    r = run_replay(t, fixture_topo, RoundRobin(("P1",)), SimConfig(1000))
    assert [e.window for e in r.epochs] == partition_epochs(t.span_ns, 1000)
    assert [e.diagnostics.samples for e in r.epochs] == [1, 2]


def test_empty_windows_are_reported(fixture_topo):
    t = Trace((Access(0, 0), Access(5500, 0)))
    r = run_replay(t, fixture_topo, AllLocal(), SimConfig(1000))
    assert len(r.epochs) == 6
    assert [e.diagnostics.samples for e in r.epochs] == [1, 0, 0, 0, 0, 1]


def test_counter_scaling(topo_250):
    events = [Alloc(0, 0, 4096), Counters(0, llc_misses=1000, l2_stalls_cycles=77)]
    events += [Access(i + 1, 64 * (i % 4)) for i in range(10)]
    t = Trace(tuple(events))
    scaled = run_replay(t, topo_250, RoundRobin(("P1",)), SimConfig(10**6, True)).epochs[0]
    raw = run_replay(t, topo_250, RoundRobin(("P1",)), SimConfig(10**6, False)).epochs[0]
    assert scaled.counts["P1"].reads == 1000
    assert raw.counts["P1"].reads == 10
    assert scaled.diagnostics.llc_misses == 1000 and scaled.diagnostics.l2_stalls == 77
    assert scaled.delays.latency_ns == pytest.approx(161_100, rel=1e-12)


def test_sample_period_multiplies_counts(topo_250):
    events = (Alloc(0, 0, 4096),) + tuple(Access(i, 0) for i in range(10))
    r = run_replay(Trace(events, sample_period=100), topo_250, RoundRobin(("P1",)), SimConfig(10**6))
    assert r.epochs[0].counts["P1"] == OpCount(1000, 0, 64_000)


def test_switch_bytes_and_bandwidth_floor(fixture_topo):
    t = synth_trace(SynthSpec("sequential", 20_000, 1 << 20, 1, 0.5, 0))
    r = run_replay(t, fixture_topo, RoundRobin(("P1",)), SimConfig(5000))
    for e in r.epochs:
        assert set(e.switch_bytes) <= {"RC", "S1"}
        for nid, b in e.switch_bytes.items():
            assert e.window.length_ns + e.delays.total_ns >= Fraction(b) / Fraction(fixture_topo.nodes[nid].bandwidth_bytes_per_ns)


def test_report_additivity(fixture_topo):
    t = random_trace(random.Random(5), 2000, with_counters=True)
    r = run_replay(t, fixture_topo, RoundRobin(("P1",)), SimConfig(500))
    r.check_additivity()
    assert r.clock.simulated_ns - r.clock.native_ns == sum(e.delays.total_ns for e in r.epochs)
    assert r.clock.simulated_ns >= r.clock.native_ns


# -- live -----------------------------------------------------------------------


def test_live_equals_replay(fixture_topo):
    t = random_trace(random.Random(9), 3000, with_counters=True)
    cfg = SimConfig(700)
    stalls = []
    live = run_live(mock_collector(t, 64), fixture_topo, RoundRobin(("P1",)), cfg, stall=stalls.append)
    replay = run_replay(t, fixture_topo, RoundRobin(("P1",)), cfg)
    assert live == replay
    assert stalls == [e.delays.total_ns for e in replay.epochs]


def test_live_empty(fixture_topo):
    r = run_live(mock_collector(Trace(), 4), fixture_topo, AllLocal())
    assert r.epochs == [] and r.clock.native_ns == 0 and r.clock.simulated_ns == 0
    assert not r.truncated


class FailingCollector:
    """Delivers events until the target passes ``fail_at_ts``, then errors."""

    def __init__(self, trace, fail_at_ts):
        self.events = list(trace.events)
        self.fail_at_ts = fail_at_ts
        self.pos = 0
        self.exhausted = False

    def poll(self):
        if self.pos < len(self.events) and self.events[self.pos].ts_ns >= self.fail_at_ts:
            raise CollectorError("probe detached")
        batch = []
        while self.pos < len(self.events) and self.events[self.pos].ts_ns < self.fail_at_ts and len(batch) < 8:
            batch.append(self.events[self.pos])
            self.pos += 1
        return batch

    def stop(self):
        return []


def test_live_truncated_after_collector_failure(fixture_topo):
    t = Trace(tuple(Access(ts, 0) for ts in range(0, 5000, 50)))
    r = run_live(FailingCollector(t, 2500), fixture_topo, AllLocal(), SimConfig(1000))
    assert r.truncated
    assert len(r.epochs) == 2
    assert r.clock.native_ns == 2000
    r.check_additivity()
