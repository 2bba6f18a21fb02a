"""``cxlsim`` command line: validate, synth, simulate."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, PlacementError, TopologyError, TraceFormatError
from .report import load_run, write_csv, write_report
from .timing import SimulationError, run_replay
from .topology import load_topology, resolve_path, switches_on_path
from .trace import PATTERNS, SynthSpec, save_trace, synth_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_SIM = 4


def _err(msg: str) -> None:
    print(f"cxlsim: error: {msg}", file=sys.stderr)


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        topo = load_topology(args.topology)
    except OSError as exc:
        _err(f"cannot read topology: {exc}")
        return EXIT_CONFIG
    except TopologyError as exc:
        _err(f"invalid topology: {exc}")
        return EXIT_CONFIG
    print(f"topology ok: {len(topo.nodes)} nodes, root {topo.root}, local DRAM {topo.local_latency_ns:g} ns")
    for pool in topo.pools:
        path = resolve_path(topo, pool)
        chain = "→".join(switches_on_path(topo, pool))
        print(
            f"{pool}: lat {path.total_latency_ns:g} ns, "
            f"bw {path.min_bandwidth_bytes_per_ns:g} B/ns, via {chain}"
        )
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        pattern=args.pattern,
        ops=args.ops,
        working_set_bytes=args.working_set,
        inter_arrival_ns=args.inter_arrival,
        write_fraction=args.write_frac,
        seed=args.seed,
        cacheline_bytes=args.cacheline,
    )
    try:
        trace = synth_trace(spec)
    except ValueError as exc:
        _err(f"invalid synth spec: {exc}")
        return EXIT_CONFIG
    try:
        save_trace(trace, args.out)
    except OSError as exc:
        _err(f"cannot write trace: {exc}")
        return EXIT_CONFIG
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        topo, trace, policy, cfg = load_run(args.config)
    except OSError as exc:
        _err(f"cannot read input: {exc}")
        return EXIT_CONFIG
    except (ConfigError, TopologyError) as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except TraceFormatError as exc:
        _err(f"trace parse error: {exc}")
        return EXIT_PARSE
    try:
        report = run_replay(trace, topo, policy, cfg)
    except (SimulationError, PlacementError) as exc:
        _err(f"simulation error: {exc}")
        return EXIT_SIM
    try:
        write_report(report, args.out)
        if args.csv:
            with open(args.csv, "w", encoding="utf-8", newline="") as fh:
                write_csv(report, fh)
    except OSError as exc:
        _err(f"cannot write report: {exc}")
        return EXIT_CONFIG
    c = report.clock
    slowdown = float(c.simulated_ns / c.native_ns) if c.native_ns else 1.0
    print(
        f"{len(report.epochs)} epochs, native {c.native_ns} ns, "
        f"simulated {float(c.simulated_ns):.3f} ns (x{slowdown:.3f})"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cxlsim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a topology file and print its pool paths")
    p.add_argument("--topology", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate a synthetic trace")
    p.add_argument("--pattern", choices=PATTERNS, default="sequential")
    p.add_argument("--ops", type=int, required=True)
    p.add_argument("--working-set", type=int, required=True, help="bytes")
    p.add_argument("--inter-arrival", type=int, default=100, help="ns between accesses")
    p.add_argument("--write-frac", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cacheline", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="replay a trace against a topology")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
