"""CXL.mem topology tree: a root complex, switches and memory pools.

Every node carries a one-way latency (ns), a sustained bandwidth (bytes/ns,
numerically equal to GB/s) and a serial transmission time (ns). Paths are
resolved once at construction and cached, so the replay loop can query them
cheaply.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .errors import NotAPoolError, TopologyError, UnknownNodeError

ROOT_COMPLEX = "root_complex"
SWITCH = "switch"
POOL = "pool"
KINDS = (ROOT_COMPLEX, SWITCH, POOL)


@dataclass(frozen=True)
class TopoNode:
    id: str
    kind: str
    latency_ns: float
    bandwidth_bytes_per_ns: float
    stt_ns: float = 0.0
    capacity_bytes: int = 0
    children: tuple[str, ...] = ()
    write_latency_ns: float | None = None

    @property
    def effective_write_latency_ns(self) -> float:
        if self.write_latency_ns is None:
            return self.latency_ns
        return self.write_latency_ns


@dataclass(frozen=True)
class PoolPath:
    pool: str
    hops: tuple[str, ...]
    total_latency_ns: float
    min_bandwidth_bytes_per_ns: float
    total_write_latency_ns: float


@dataclass(frozen=True)
class Topology:
    """Validated, immutable topology tree.

    Construct through :func:`parse_topology` or :func:`build_topology`; the
    constructor itself runs full validation too.
    """

    nodes: Mapping[str, TopoNode]
    root: str
    local_latency_ns: float
    _paths: dict[str, PoolPath] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        _validate(self.nodes, self.root, self.local_latency_ns)
        paths: dict[str, PoolPath] = {}
        for pool, hops in _walk_pools(self.nodes, self.root):
            path_nodes = [self.nodes[h] for h in hops]
            paths[pool] = PoolPath(
                pool=pool,
                hops=tuple(hops),
                total_latency_ns=sum(n.latency_ns for n in path_nodes),
                min_bandwidth_bytes_per_ns=min(
                    n.bandwidth_bytes_per_ns for n in path_nodes
                ),
                total_write_latency_ns=sum(
                    n.effective_write_latency_ns for n in path_nodes
                ),
            )
        self._paths.update(paths)

    @property
    def pools(self) -> list[str]:
        """Pool ids in depth-first (document child) order."""
        return list(self._paths)

    @property
    def switch_ids(self) -> list[str]:
        return [n.id for n in self.nodes.values() if n.kind != POOL]

    def node(self, node_id: str) -> TopoNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNodeError("unknown node id", node_id) from None

    def digest(self) -> str:
        """SHA-256 of the canonical serialized form."""
        blob = json.dumps(topology_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _validate(nodes: Mapping[str, TopoNode], root: str, local_latency_ns: float) -> None:
    if not isinstance(local_latency_ns, (int, float)) or isinstance(local_latency_ns, bool):
        raise TopologyError("missing local_latency_ns")
    if not local_latency_ns > 0:
        raise TopologyError("local_latency_ns must be positive")

    for nid, n in nodes.items():
        if nid != n.id:
            raise TopologyError("node keyed under a different id", nid)
        if not n.id:
            raise TopologyError("empty node id")
        if n.kind not in KINDS:
            raise TopologyError(f"unknown kind {n.kind!r}", nid)
        if not n.latency_ns >= 0:
            raise TopologyError("negative latency", nid)
        if n.write_latency_ns is not None and not n.write_latency_ns >= 0:
            raise TopologyError("negative write latency", nid)
        if not n.bandwidth_bytes_per_ns > 0:
            raise TopologyError("non-positive bandwidth", nid)
        if not n.stt_ns >= 0:
            raise TopologyError("negative stt", nid)
        if n.capacity_bytes < 0:
            raise TopologyError("negative capacity", nid)
        if n.kind == POOL and n.children:
            raise TopologyError("pool with children", nid)
        for c in n.children:
            if c not in nodes:
                raise TopologyError(f"dangling child reference {c!r}", nid)

    rcs = [n.id for n in nodes.values() if n.kind == ROOT_COMPLEX]
    if not rcs:
        raise TopologyError("missing root complex")
    if len(rcs) > 1:
        raise TopologyError("multiple roots: more than one root complex", rcs[1])
    if root != rcs[0]:
        raise TopologyError("root is not the root complex", root)

    parent: dict[str, str] = {}
    for n in nodes.values():
        for c in n.children:
            if c in parent or n.children.count(c) > 1:
                raise TopologyError("multiple parents", c)
            parent[c] = n.id

    # a parent chain that revisits a node is a cycle
    for start in nodes:
        seen = {start}
        cur = start
        while cur in parent:
            cur = parent[cur]
            if cur in seen:
                raise TopologyError("cycle", cur)
            seen.add(cur)

    for nid in nodes:
        if nid != root and nid not in parent:
            raise TopologyError("multiple roots: node has no parent", nid)


def _walk_pools(nodes: Mapping[str, TopoNode], root: str) -> Iterable[tuple[str, list[str]]]:
    stack: list[tuple[str, list[str]]] = [(root, [root])]
    while stack:
        nid, hops = stack.pop()
        node = nodes[nid]
        if node.kind == POOL:
            yield nid, hops
            continue
        for c in reversed(node.children):
            stack.append((c, hops + [c]))


def build_topology(nodes: Iterable[TopoNode], local_latency_ns: float) -> Topology:
    table: dict[str, TopoNode] = {}
    for n in nodes:
        if n.id in table:
            raise TopologyError("duplicate id", n.id)
        table[n.id] = n
    rcs = [n.id for n in table.values() if n.kind == ROOT_COMPLEX]
    root = rcs[0] if rcs else ""
    return Topology(nodes=table, root=root, local_latency_ns=local_latency_ns)


_REQUIRED = object()


def _number(raw: Mapping[str, Any], key: str, nid: str, default: Any = _REQUIRED) -> float:
    if key not in raw:
        if default is _REQUIRED:
            raise TopologyError(f"missing field {key!r}", nid)
        return default
    value = raw[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TopologyError(f"field {key!r} must be a number", nid)
    return float(value)


def topology_from_dict(doc: Any) -> Topology:
    if not isinstance(doc, dict):
        raise TopologyError("topology document must be a JSON object")
    if "local_latency_ns" not in doc:
        raise TopologyError("missing local_latency_ns")
    local = doc["local_latency_ns"]
    raw_nodes = doc.get("nodes")
    if not isinstance(raw_nodes, list):
        raise TopologyError("'nodes' must be a list")

    nodes = []
    for i, raw in enumerate(raw_nodes):
        if not isinstance(raw, dict):
            raise TopologyError(f"node #{i} is not an object")
        nid = raw.get("id")
        if not isinstance(nid, str) or not nid:
            raise TopologyError(f"node #{i} has no id")
        children = raw.get("children", [])
        if not isinstance(children, list) or not all(isinstance(c, str) for c in children):
            raise TopologyError("'children' must be a list of ids", nid)
        capacity = raw.get("capacity_bytes", 0)
        if isinstance(capacity, bool) or not isinstance(capacity, int):
            raise TopologyError("field 'capacity_bytes' must be an integer", nid)
        write_lat = _number(raw, "write_latency_ns", nid, None)
        nodes.append(
            TopoNode(
                id=nid,
                kind=raw.get("kind", ""),
                latency_ns=_number(raw, "latency_ns", nid),
                # GB/s and bytes/ns are the same quantity
                bandwidth_bytes_per_ns=_number(raw, "bandwidth_gbps", nid),
                stt_ns=_number(raw, "stt_ns", nid, 0.0),
                capacity_bytes=capacity,
                children=tuple(children),
                write_latency_ns=write_lat,
            )
        )
    if isinstance(local, bool) or not isinstance(local, (int, float)):
        raise TopologyError("missing local_latency_ns")
    return build_topology(nodes, float(local))


def parse_topology(text: str | bytes) -> Topology:
    """Parse and validate a topology JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TopologyError(f"syntax error: {exc}") from None
    return topology_from_dict(doc)


def load_topology(path: str) -> Topology:
    with open(path, encoding="utf-8") as fh:
        return parse_topology(fh.read())


def topology_to_dict(topo: Topology) -> dict[str, Any]:
    nodes = []
    for n in topo.nodes.values():
        raw: dict[str, Any] = {
            "id": n.id,
            "kind": n.kind,
            "latency_ns": n.latency_ns,
            "bandwidth_gbps": n.bandwidth_bytes_per_ns,
            "stt_ns": n.stt_ns,
            "capacity_bytes": n.capacity_bytes,
            "children": list(n.children),
        }
        if n.write_latency_ns is not None:
            raw["write_latency_ns"] = n.write_latency_ns
        nodes.append(raw)
    return {"local_latency_ns": topo.local_latency_ns, "nodes": nodes}


def dump_topology(topo: Topology) -> str:
    return json.dumps(topology_to_dict(topo), indent=2)


def resolve_path(topo: Topology, pool: str) -> PoolPath:
    """Return the root-to-pool path with its summed latency and bottleneck bandwidth."""
    node = topo.node(pool)
    if node.kind != POOL:
        raise NotAPoolError("not a pool", pool)
    return topo._paths[pool]


def switches_on_path(topo: Topology, pool: str) -> list[str]:
    """Root-first list of root-complex and switch ids a pool's traffic crosses."""
    path = resolve_path(topo, pool)
    return [h for h in path.hops if topo.nodes[h].kind != POOL]
