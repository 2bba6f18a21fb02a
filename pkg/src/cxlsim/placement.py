"""Address-range to pool mapping driven by allocation events."""

from __future__ import annotations

from bisect import bisect_right, insort
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Union

from .errors import ConfigError, PlacementError
from .topology import POOL, Topology
from .trace import Access, Alloc, Free

LOCAL = "LOCAL"


@dataclass(frozen=True)
class AllLocal:
    pass


@dataclass(frozen=True)
class RoundRobin:
    pools: tuple[str, ...]


@dataclass(frozen=True)
class PageInterleave:
    pools: tuple[str, ...]
    page_bytes: int = 4096


@dataclass(frozen=True)
class ExplicitRule:
    min_size_bytes: int
    pool: str


@dataclass(frozen=True)
class ExplicitRules:
    rules: tuple[ExplicitRule, ...]


@dataclass(frozen=True)
class CapacityFirstFit:
    pools: tuple[str, ...]
    fallback_local: bool = True


PlacementPolicy = Union[AllLocal, RoundRobin, PageInterleave, ExplicitRules, CapacityFirstFit]


def policy_pools(policy: PlacementPolicy) -> tuple[str, ...]:
    if isinstance(policy, ExplicitRules):
        return tuple(r.pool for r in policy.rules)
    return getattr(policy, "pools", ())


def check_policy(policy: PlacementPolicy, topo: Topology) -> None:
    """Raise ConfigError unless every referenced pool exists and is a pool."""
    for pid in policy_pools(policy):
        node = topo.nodes.get(pid)
        if node is None:
            raise ConfigError(f"policy references unknown pool {pid!r}")
        if node.kind != POOL:
            raise ConfigError(f"policy references {pid!r}, which is not a pool")
    if isinstance(policy, (RoundRobin, PageInterleave, CapacityFirstFit)) and not policy.pools:
        raise ConfigError("policy needs at least one pool")
    if isinstance(policy, PageInterleave):
        pb = policy.page_bytes
        if pb < 1 or pb & (pb - 1):
            raise ConfigError("page_bytes must be a positive power of two")
    if isinstance(policy, ExplicitRules):
        sizes = [r.min_size_bytes for r in policy.rules]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ConfigError("explicit rule thresholds must be strictly increasing")


def policy_from_dict(doc: Mapping[str, Any]) -> PlacementPolicy:
    if not isinstance(doc, Mapping):
        raise ConfigError("policy must be an object")
    kind = doc.get("policy")
    try:
        if kind == "all_local":
            return AllLocal()
        if kind == "round_robin":
            return RoundRobin(tuple(doc["pools"]))
        if kind == "page_interleave":
            return PageInterleave(tuple(doc["pools"]), int(doc.get("page_bytes", 4096)))
        if kind == "explicit":
            rules = tuple(ExplicitRule(int(r["min_size_bytes"]), str(r["pool"])) for r in doc["rules"])
            return ExplicitRules(rules)
        if kind == "capacity_first_fit":
            return CapacityFirstFit(tuple(doc["pools"]), bool(doc.get("fallback_local", True)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad {kind} policy: {exc!r}") from None
    raise ConfigError(f"unknown policy {kind!r}")


def policy_to_dict(policy: PlacementPolicy) -> dict[str, Any]:
    if isinstance(policy, AllLocal):
        return {"policy": "all_local"}
    if isinstance(policy, RoundRobin):
        return {"policy": "round_robin", "pools": list(policy.pools)}
    if isinstance(policy, PageInterleave):
        return {"policy": "page_interleave", "pools": list(policy.pools), "page_bytes": policy.page_bytes}
    if isinstance(policy, ExplicitRules):
        return {
            "policy": "explicit",
            "rules": [{"min_size_bytes": r.min_size_bytes, "pool": r.pool} for r in policy.rules],
        }
    return {"policy": "capacity_first_fit", "pools": list(policy.pools), "fallback_local": policy.fallback_local}


@dataclass
class OpCount:
    reads: int = 0
    writes: int = 0
    bytes: int = 0

    @property
    def ops(self) -> int:
        return self.reads + self.writes


PoolCounts = dict[str, OpCount]


class AllocationMap:
    """Non-overlapping half-open intervals ``[start, end)`` tagged with a pool.

    Intervals are kept sorted by start so lookups are a bisect. Frees may cover
    part of an interval, in which case the remainder is kept (munmap of a
    sub-range).
    """

    def __init__(self, policy: PlacementPolicy, topo: Topology):
        check_policy(policy, topo)
        self.policy = policy
        self.topo = topo
        self._starts: list[int] = []
        self._iv: dict[int, tuple[int, str]] = {}  # start -> (end, pool)
        self.used_bytes: dict[str, int] = {}
        self.unknown_frees = 0
        self._rr_next = 0
        self._hit: tuple[int, int, str] = (0, 0, LOCAL)

    def __len__(self) -> int:
        return len(self._starts)

    def intervals(self) -> list[tuple[int, int, str]]:
        return [(s, *self._iv[s]) for s in self._starts]

    # -- lookup ------------------------------------------------------------

    def lookup(self, addr: int) -> str:
        s, e, pool = self._hit
        if s <= addr < e:
            return pool
        i = bisect_right(self._starts, addr) - 1
        if i >= 0:
            start = self._starts[i]
            end, pool = self._iv[start]
            if addr < end:
                self._hit = (start, end, pool)
                return pool
        return LOCAL

    # -- mutation ----------------------------------------------------------

    def apply(self, ev: Alloc | Free) -> None:
        if isinstance(ev, Alloc):
            self._alloc(ev.addr, ev.size_bytes)
        elif isinstance(ev, Free):
            self._free(ev.addr, ev.size_bytes)
        else:
            raise TypeError(f"apply() takes Alloc or Free, got {type(ev).__name__}")

    def _overlaps(self, start: int, end: int) -> bool:
        i = bisect_right(self._starts, start) - 1
        if i >= 0 and self._iv[self._starts[i]][0] > start:
            return True
        return i + 1 < len(self._starts) and self._starts[i + 1] < end

    def _capacity_left(self, pool: str) -> int | None:
        cap = self.topo.nodes[pool].capacity_bytes
        if cap == 0:
            return None
        return cap - self.used_bytes.get(pool, 0)

    def _insert(self, start: int, end: int, pool: str) -> None:
        insort(self._starts, start)
        self._iv[start] = (end, pool)

    def _alloc(self, addr: int, size: int) -> None:
        end = addr + size
        if self._overlaps(addr, end):
            raise PlacementError(f"allocation [{addr:#x}, {end:#x}) overlaps a live interval")
        chunks = self._place(addr, size)
        demand: dict[str, int] = {}
        for start, stop, pool in chunks:
            demand[pool] = demand.get(pool, 0) + stop - start
        for pool, need in demand.items():
            left = None if pool == LOCAL else self._capacity_left(pool)
            if left is not None and need > left:
                raise PlacementError(f"pool {pool!r} capacity exhausted ({need} bytes requested, {left} left)")
        for pool, need in demand.items():
            self.used_bytes[pool] = self.used_bytes.get(pool, 0) + need
        for start, stop, pool in chunks:
            self._insert(start, stop, pool)

    def _place(self, addr: int, size: int) -> list[tuple[int, int, str]]:
        policy = self.policy
        end = addr + size
        if isinstance(policy, AllLocal):
            return [(addr, end, LOCAL)]
        if isinstance(policy, RoundRobin):
            pool = policy.pools[self._rr_next % len(policy.pools)]
            self._rr_next += 1
            return [(addr, end, pool)]
        if isinstance(policy, PageInterleave):
            page = policy.page_bytes
            chunks = []
            start = addr
            k = 0
            while start < end:
                stop = min(end, (start // page + 1) * page)
                chunks.append((start, stop, policy.pools[k % len(policy.pools)]))
                start = stop
                k += 1
            return chunks
        if isinstance(policy, ExplicitRules):
            # tightest threshold that the allocation still meets
            pool = LOCAL
            for rule in policy.rules:
                if rule.min_size_bytes <= size:
                    pool = rule.pool
            return [(addr, end, pool)]
        if isinstance(policy, CapacityFirstFit):
            for pool in policy.pools:
                left = self._capacity_left(pool)
                if left is None or left >= size:
                    return [(addr, end, pool)]
            if not policy.fallback_local:
                raise PlacementError(f"no pool has {size} bytes free and local fallback is disabled")
            return [(addr, end, LOCAL)]
        raise TypeError(f"unknown policy {policy!r}")

    def _free(self, addr: int, size: int) -> None:
        end = addr + size
        i = bisect_right(self._starts, addr) - 1
        if i < 0 or self._iv[self._starts[i]][0] <= addr:
            i += 1
        touched = []
        while i < len(self._starts) and self._starts[i] < end:
            touched.append(self._starts[i])
            i += 1
        if not touched:
            self.unknown_frees += 1
            return
        for start in touched:
            stop, pool = self._iv.pop(start)
            self._starts.remove(start)
            lo, hi = max(start, addr), min(stop, end)
            self.used_bytes[pool] -= hi - lo
            if start < lo:
                self._insert(start, lo, pool)
            if hi < stop:
                self._insert(hi, stop, pool)
        self._hit = (0, 0, LOCAL)


def apply_event(amap: AllocationMap, ev: Alloc | Free) -> AllocationMap:
    amap.apply(ev)
    return amap


def lookup(amap: AllocationMap, addr: int) -> str:
    return amap.lookup(addr)


def classify_epoch(amap: AllocationMap, accesses: Iterable[Access]) -> PoolCounts:
    counts: PoolCounts = {}
    for ev in accesses:
        pool = amap.lookup(ev.addr)
        c = counts.get(pool)
        if c is None:
            c = counts[pool] = OpCount()
        if ev.is_write:
            c.writes += 1
        else:
            c.reads += 1
        c.bytes += ev.size_bytes
    return counts


def _scale(value: int, num: int, den: int) -> int:
    # round half up, exact in integers
    return (2 * value * num + den) // (2 * den)


def scale_counts(sampled: PoolCounts, total_llc_misses: int) -> PoolCounts:
    """Scale sampled per-pool counts so total ops match the LLC-miss counter."""
    total = sum(c.ops for c in sampled.values())
    if total == 0 or total_llc_misses == 0:
        return {p: OpCount(c.reads, c.writes, c.bytes) for p, c in sampled.items()}
    return {
        p: OpCount(
            _scale(c.reads, total_llc_misses, total),
            _scale(c.writes, total_llc_misses, total),
            _scale(c.bytes, total_llc_misses, total),
        )
        for p, c in sampled.items()
    }


def multiply_counts(counts: PoolCounts, factor: int) -> PoolCounts:
    return {p: OpCount(c.reads * factor, c.writes * factor, c.bytes * factor) for p, c in counts.items()}
