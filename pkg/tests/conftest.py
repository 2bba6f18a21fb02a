import json
import time

import pytest

from cxlsim.topology import parse_topology

# RC -> S1 -> P1, local DRAM at 88.9 ns (the measured host latency)
FIXTURE_DOC = {
    "local_latency_ns": 88.9,
    "nodes": [
        {"id": "RC", "kind": "root_complex", "latency_ns": 20, "bandwidth_gbps": 64, "stt_ns": 10, "children": ["S1"]},
        {"id": "S1", "kind": "switch", "latency_ns": 50, "bandwidth_gbps": 16, "stt_ns": 25, "children": ["P1"]},
        {"id": "P1", "kind": "pool", "latency_ns": 150, "bandwidth_gbps": 16, "children": []},
    ],
}


@pytest.fixture
def fixture_doc():
    return json.loads(json.dumps(FIXTURE_DOC))


@pytest.fixture
def fixture_topo():
    return parse_topology(json.dumps(FIXTURE_DOC))


@pytest.fixture
def topo_250():
    """Fixture variant whose P1 path latency is 250 ns and whose STTs are 0."""
    doc = json.loads(json.dumps(FIXTURE_DOC))
    doc["nodes"][0]["stt_ns"] = 0
    doc["nodes"][1]["stt_ns"] = 0
    doc["nodes"][2]["latency_ns"] = 180
    return parse_topology(json.dumps(doc))


_criteria: list[tuple[int, str, str, float]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item._criterion_elapsed = time.perf_counter() - start


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and rep.when == "call":
        n, title = mark.args
        status = "PASS" if rep.passed else "FAIL"
        _criteria.append((n, title, status, getattr(item, "_criterion_elapsed", 0.0)))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, status, elapsed in sorted(_criteria):
        terminalreporter.write_line(f"AC{n} {status:4s} {title} ({elapsed:.2f}s)")
