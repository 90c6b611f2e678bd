#!/usr/bin/env python3
"""
Count trace events and recompute the run metrics from a trace file.

Usage:
    python scripts/stats_from_trace.py --trace_path output/desk.trc
    python scripts/stats_from_trace.py --trace_path output/desk.trc \
        --scenario scenarios/desk-20n-100s.scn --metrics

Output (JSON):
    {
        "total_events": 48210,
        "by_kind": {"SEND": 1200, "FWD": 30211, ...},
        "by_type": {"CBR": {"SEND": 1000, "RECV": 812, ...}, "RREQ": {...}},
        "drops_by_reason": {"expired": 31, "queue_full": 2, ...},
        "deaths": [{"node": 3, "time": 61.204117}],
        "last_time": 100.0,
        "metrics": {...}        # only with --metrics (needs the .energy.csv ledger)
    }
"""

import argparse
import json
import logging
import os
import sys
from collections import Counter, defaultdict
from pathlib import Path
from typing import List

import pandas as pd

try:
    from scripts.scenario import parse_scenario
    from scripts.traffic_metrics import (
        TraceEvent,
        TraceKind,
        compute_report,
        energy_ledger_path,
        read_energy_ledger,
        read_trace,
    )
except ImportError:
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from scripts.scenario import parse_scenario
    from scripts.traffic_metrics import (
        TraceEvent,
        TraceKind,
        compute_report,
        energy_ledger_path,
        read_energy_ledger,
        read_trace,
    )


logging.basicConfig(
    level=os.getenv("SIM_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(levelname)s - %(message)s',
)


def load_trace_frame(trace_path) -> pd.DataFrame:
    """Trace as a DataFrame with columns time, kind, node, pkt_id, ptype, reason."""
    events = read_trace(trace_path, skip_malformed=True)
    return pd.DataFrame(
        [(e.time, e.kind.value, e.node, e.pkt_id, e.ptype, e.reason.value) for e in events],
        columns=["time", "kind", "node", "pkt_id", "ptype", "reason"],
    )


def compute_stats(events: List[TraceEvent]) -> dict:
    by_type = defaultdict(Counter)
    drops = Counter()
    deaths = []
    for e in events:
        if e.kind is TraceKind.DIE:
            deaths.append({"node": e.node, "time": e.time})
            continue
        by_type[e.ptype][e.kind.value] += 1
        if e.kind is TraceKind.DROP:
            drops[e.reason.value] += 1

    return {
        "total_events": len(events),
        "by_kind": dict(Counter(e.kind.value for e in events)),
        "by_type": {ptype: dict(counts) for ptype, counts in sorted(by_type.items())},
        "drops_by_reason": dict(drops),
        "deaths": sorted(deaths, key=lambda d: d["time"]),
        "last_time": max((e.time for e in events), default=0.0),
    }


def recompute_metrics(events: List[TraceEvent], ledger_path, n_smh: int, duration: float,
                      deadline: float, packet_size: int = 512) -> dict:
    ledger = read_energy_ledger(ledger_path)
    report = compute_report(events, ledger, n_smh, duration, deadline, packet_size)
    return report.to_dict()


def main():
    parser = argparse.ArgumentParser(description="Event counts and metric recomputation from a simulation trace")
    parser.add_argument("--trace_path", "-t", type=str, required=True, help="Trace file path")
    parser.add_argument("--output", "-o", type=str, default=None, help="Write the JSON here (default: stdout)")
    parser.add_argument("--metrics", action="store_true", help="Recompute the five metrics (needs the energy ledger)")
    parser.add_argument("--energy", type=str, default=None, help="Energy ledger CSV (default: <trace>.energy.csv)")
    parser.add_argument("--scenario", type=str, default=None, help="Scenario file supplying n_smh, duration, deadline, packet size")
    parser.add_argument("--n_smh", type=int, default=25)
    parser.add_argument("--duration", type=float, default=1000.0)
    parser.add_argument("--deadline", type=float, default=15.0)
    parser.add_argument("--packet_size", type=int, default=512)
    parser.add_argument("--events_csv", type=str, default=None, help="Also export the events as a CSV table")
    args = parser.parse_args()

    if not Path(args.trace_path).exists():
        print(f"trace file not found: {args.trace_path}", file=sys.stderr)
        sys.exit(1)
    events = read_trace(args.trace_path, skip_malformed=True)
    stats = compute_stats(events)
    if args.events_csv:
        load_trace_frame(args.trace_path).to_csv(args.events_csv, index=False)

    if args.metrics:
        n_smh, duration, deadline, packet_size = args.n_smh, args.duration, args.deadline, args.packet_size
        if args.scenario:
            s = parse_scenario(args.scenario)
            n_smh, duration, deadline, packet_size = s.n_smh, s.duration, s.deadline_s, s.packet_size
        ledger_path = Path(args.energy) if args.energy else energy_ledger_path(args.trace_path)
        try:
            stats["metrics"] = recompute_metrics(events, ledger_path, n_smh, duration, deadline, packet_size)
        except (FileNotFoundError, ValueError) as e:
            print(f"cannot recompute metrics: {e}", file=sys.stderr)
            sys.exit(1)

    output_json = json.dumps(stats, ensure_ascii=False, indent=2)

    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(output_json)
        print(f"Stats written to {args.output}", file=sys.stderr)
    else:
        print(output_json)


if __name__ == "__main__":
    main()
