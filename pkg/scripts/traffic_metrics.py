"""
Module: traffic_metrics
Purpose: CBR traffic generation, the event trace, and the five performance metrics.

Trace line format (one event per line, space separated):
    <time:6 decimals> <KIND> n=<node> p=<pkt-id> t=<CBR|RREQ|RREP|RERR> r=<reason>
DIE lines carry p=-1 t=- since no packet is involved.

Metrics are always computed from trace events (never from simulator internals), so the
in-memory report and a recomputation from the trace file agree exactly.
"""
import logging
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO

import pandas as pd

logger = logging.getLogger(__name__)

NO_PACKET = -1


def trace_time(t: float) -> float:
    """Time as written to the trace (6 decimals)."""
    return float(f"{t:.6f}")


class TraceKind(str, Enum):
    SEND = "SEND"
    RECV = "RECV"
    FWD = "FWD"
    DROP = "DROP"
    DIE = "DIE"


class DropReason(str, Enum):
    NONE = "none"
    QUEUE_FULL = "queue_full"
    EXPIRED = "expired"
    DEAD = "dead"
    NO_ROUTE = "no_route"
    BROKEN_LINK = "broken_link"
    DUPLICATE = "duplicate"
    END = "end"


class ZeroGeneratedError(ValueError):
    """No CBR packet was generated, so ratios are undefined."""


class NoDeliveriesError(ValueError):
    """No CBR packet was delivered, so delay and energy-per-bit are undefined."""


@dataclass(frozen=True)
class CbrFlow:
    src: int
    dst: int
    rate: float
    deadline: float
    start: float
    stop: float
    packet_size: int = 512
    flow_id: int = 0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"CBR rate must be > 0, got {self.rate}")
        if self.deadline <= 0:
            raise ValueError(f"deadline must be > 0, got {self.deadline}")


def cbr_schedule(flow: CbrFlow) -> List[float]:
    """Send instants start, start+1/rate, ... strictly before stop."""
    times = []
    k = 0
    while True:
        t = flow.start + k / flow.rate
        if t >= flow.stop:
            break
        times.append(t)
        k += 1
    return times


@dataclass(frozen=True)
class TraceEvent:
    time: float
    kind: TraceKind
    node: int
    pkt_id: int
    ptype: str
    reason: DropReason = DropReason.NONE

    def to_line(self) -> str:
        return (
            f"{self.time:.6f} {self.kind.value} n={self.node} p={self.pkt_id} "
            f"t={self.ptype} r={self.reason.value}"
        )

    @classmethod
    def from_line(cls, line: str) -> "TraceEvent":
        parts = line.split()
        if len(parts) != 6:
            raise ValueError(f"malformed trace line: {line!r}")
        fields = dict(p.split("=", 1) for p in parts[2:])
        return cls(
            time=float(parts[0]),
            kind=TraceKind(parts[1]),
            node=int(fields["n"]),
            pkt_id=int(fields["p"]),
            ptype=fields["t"],
            reason=DropReason(fields["r"]),
        )


class Tracer:
    """Collects trace events in memory and optionally streams them to a file."""

    def __init__(self, stream: Optional[TextIO] = None):
        self.stream = stream
        self.events: List[TraceEvent] = []
        # CBR packets sent but not yet terminated -> last known holder
        self.outstanding: Dict[int, int] = {}

    def record(self, time: float, kind: TraceKind, node: int, pkt_id: int, ptype: str,
               reason: DropReason = DropReason.NONE) -> TraceEvent:
        # stored rounded so file and memory hold the same value
        event = TraceEvent(trace_time(time), kind, node, pkt_id, ptype, reason)
        self.events.append(event)
        if self.stream is not None:
            self.stream.write(event.to_line() + "\n")
        if ptype == "CBR":
            self._track(event)
        return event

    def _track(self, event: TraceEvent) -> None:
        if event.kind is TraceKind.SEND or event.kind is TraceKind.FWD:
            self.outstanding[event.pkt_id] = event.node
        elif event.kind in (TraceKind.RECV, TraceKind.DROP):
            if self.outstanding.pop(event.pkt_id, None) is None:
                logger.warning(f"CBR packet {event.pkt_id} terminated twice (t={event.time})")

    def die(self, time: float, node: int) -> TraceEvent:
        return self.record(time, TraceKind.DIE, node, NO_PACKET, "-")

    def flush_outstanding(self, time: float) -> int:
        """Terminate every CBR packet still in the network at the end of the run."""
        pending = sorted(self.outstanding.items())
        for pkt_id, holder in pending:
            self.record(time, TraceKind.DROP, holder, pkt_id, "CBR", DropReason.END)
        return len(pending)


def read_trace(path, skip_malformed: bool = False) -> List[TraceEvent]:
    """Parse a trace file; with skip_malformed, unparsable lines are logged and left out."""
    events = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                events.append(TraceEvent.from_line(line))
            except (ValueError, KeyError) as e:
                if not skip_malformed:
                    raise
                logger.warning(f"{path}: skipping line {line_no}: {e}")
    return events


# --- energy ledger ---

LEDGER_COLUMNS = ["node", "node_class", "initial_j", "residual_j", "tx_s", "rx_s"]


@dataclass(frozen=True)
class LedgerRow:
    node: int
    node_class: str
    initial_j: float
    residual_j: float
    tx_s: float
    rx_s: float

    @property
    def consumed_j(self) -> float:
        return self.initial_j - self.residual_j


def write_energy_ledger(path, rows: Sequence[LedgerRow]) -> None:
    df = pd.DataFrame([asdict(r) for r in rows], columns=LEDGER_COLUMNS)
    df.to_csv(path, index=False)


def read_energy_ledger(path) -> List[LedgerRow]:
    df = pd.read_csv(path, float_precision="round_trip")
    return [
        LedgerRow(
            node=int(r.node),
            node_class=str(r.node_class),
            initial_j=float(r.initial_j),
            residual_j=float(r.residual_j),
            tx_s=float(r.tx_s),
            rx_s=float(r.rx_s),
        )
        for r in df.itertuples(index=False)
    ]


# --- metrics ---

def _cbr_send_times(events: Iterable[TraceEvent]) -> Dict[int, float]:
    return {
        e.pkt_id: e.time
        for e in events
        if e.kind is TraceKind.SEND and e.ptype == "CBR"
    }


def _cbr_delays(events: Sequence[TraceEvent]) -> List[float]:
    sent = _cbr_send_times(events)
    return [
        e.time - sent[e.pkt_id]
        for e in events
        if e.kind is TraceKind.RECV and e.ptype == "CBR" and e.pkt_id in sent
    ]


def delivery_ratio(events: Sequence[TraceEvent]) -> float:
    generated = len(_cbr_send_times(events))
    if generated == 0:
        raise ZeroGeneratedError("no CBR packets generated")
    return len(_cbr_delays(events)) / generated


def in_time_ratio(events: Sequence[TraceEvent], d_k: float) -> float:
    """Delivered within the deadline, over generated (not delivered) packets."""
    generated = len(_cbr_send_times(events))
    if generated == 0:
        raise ZeroGeneratedError("no CBR packets generated")
    return sum(1 for d in _cbr_delays(events) if d <= d_k) / generated


def mean_e2e_delay(events: Sequence[TraceEvent]) -> float:
    delays = _cbr_delays(events)
    if not delays:
        raise NoDeliveriesError("no CBR packets delivered")
    return sum(delays) / len(delays)


@dataclass(frozen=True)
class Lifetime:
    smh: float
    any: float
    censored: bool


def network_lifetime(events: Sequence[TraceEvent], n_smh: int, duration: float) -> Lifetime:
    """First battery depletion; SMH ids are 0..n_smh-1. No death means censored at duration."""
    deaths = [e for e in events if e.kind is TraceKind.DIE]
    smh_deaths = [e.time for e in deaths if e.node < n_smh]
    smh = min(smh_deaths) if smh_deaths else duration
    first_any = min((e.time for e in deaths), default=duration)
    return Lifetime(smh=smh, any=first_any, censored=not smh_deaths)


def energy_per_bit(events: Sequence[TraceEvent], ledger: Sequence[LedgerRow], packet_size: int = 512) -> float:
    delivered = len(_cbr_delays(events))
    if delivered == 0:
        raise NoDeliveriesError("no CBR packets delivered")
    consumed = sum(row.consumed_j for row in ledger)
    return consumed / (delivered * packet_size * 8)


@dataclass(frozen=True)
class MetricsReport:
    generated: int
    delivered: int
    delivery_ratio: float
    in_time_ratio: float
    mean_e2e_delay: Optional[float]
    lifetime_smh: float
    lifetime_any: float
    lifetime_censored: bool
    energy_consumed_j: float
    energy_per_bit: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)


def compute_report(
    events: Sequence[TraceEvent],
    ledger: Sequence[LedgerRow],
    n_smh: int,
    duration: float,
    d_k: float,
    packet_size: int = 512,
) -> MetricsReport:
    generated = len(_cbr_send_times(events))
    delivered = len(_cbr_delays(events))
    try:
        mean_delay = mean_e2e_delay(events)
        per_bit = energy_per_bit(events, ledger, packet_size)
    except NoDeliveriesError:
        mean_delay = None
        per_bit = None
    lifetime = network_lifetime(events, n_smh, duration)
    return MetricsReport(
        generated=generated,
        delivered=delivered,
        delivery_ratio=delivery_ratio(events),
        in_time_ratio=in_time_ratio(events, d_k),
        mean_e2e_delay=mean_delay,
        lifetime_smh=lifetime.smh,
        lifetime_any=lifetime.any,
        lifetime_censored=lifetime.censored,
        energy_consumed_j=sum(row.consumed_j for row in ledger),
        energy_per_bit=per_bit,
    )


def energy_ledger_path(trace_path) -> Path:
    trace_path = Path(trace_path)
    return trace_path.with_name(trace_path.stem + ".energy.csv")


# --- metrics CSV ---

METRICS_CSV_COLUMNS = [
    "scenario", "policy", "seed", "rate_pps", "nodes", "deadline_s",
    "delivery_ratio", "in_time_ratio", "mean_delay_s", "lifetime_smh_s",
    "lifetime_censored", "energy_per_bit_j",
]

REPORT_TO_CSV = {
    "delivery_ratio": "delivery_ratio",
    "in_time_ratio": "in_time_ratio",
    "mean_e2e_delay": "mean_delay_s",
    "lifetime_smh": "lifetime_smh_s",
    "lifetime_censored": "lifetime_censored",
    "energy_per_bit": "energy_per_bit_j",
}


def metrics_row(scenario: str, policy: str, seed, rate_pps: float, nodes: int, deadline_s: float,
                report: Optional[dict]) -> dict:
    """One CSV row; report=None marks a failed run."""
    row = {
        "scenario": scenario,
        "policy": policy,
        "seed": seed,
        "rate_pps": rate_pps,
        "nodes": nodes,
        "deadline_s": deadline_s,
    }
    for key, column in REPORT_TO_CSV.items():
        row[column] = "failed" if report is None else report[key]
    return row
