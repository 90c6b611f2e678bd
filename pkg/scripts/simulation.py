"""
Module: simulation
Purpose: Wire one replication together (engine, nodes, mobility, CBR sources,
         router) and run it to the scenario duration.

Random streams are labelled per concern (`mobility/<node>`), so two runs with the
same seed but different policies move every node identically and generate the
same traffic; only routing decisions differ.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, TextIO, Tuple

from scripts.engine import Engine, EventKind, RngStream, SimEvent
from scripts.mobility import Point, init_waypoint, on_pause_end, on_waypoint_reached
from scripts.netmodel import EnergyState, Network, NodeQueue, NodeState
from scripts.routing import DataPacket, DsrRouter
from scripts.scenario import Scenario
from scripts.traffic_metrics import (
    CbrFlow,
    LedgerRow,
    MetricsReport,
    TraceEvent,
    Tracer,
    cbr_schedule,
    compute_report,
    energy_ledger_path,
    write_energy_ledger,
)

logger = logging.getLogger(__name__)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int, trace_stream: Optional[TextIO] = None):
        self.scenario = scenario
        self.seed = seed
        self.engine = Engine(seed)
        self.tracer = Tracer(trace_stream)
        self._rngs: Dict[int, RngStream] = {}
        # (time, node, next waypoint) for every mobility decision
        self.mobility_log: List[Tuple[float, int, Point]] = []
        self.ended_at: Optional[float] = None

        nodes = [self._make_node(i) for i in range(scenario.n_nodes)]
        self.network = Network(self.engine, nodes, scenario.link, scenario.qos.t_local, self.tracer)
        self.router = DsrRouter(
            self.engine, self.network, self.tracer, scenario.policy, scenario.qos, scenario.routing
        )
        self.engine.on(EventKind.WAYPOINT_REACHED, self._on_mobility)
        self.engine.on(EventKind.PAUSE_END, self._on_mobility)
        self.engine.on(EventKind.CBR_SEND, self._on_cbr_send)
        self.engine.on(EventKind.SIM_END, self._on_sim_end)

    def _make_node(self, node_id: int) -> NodeState:
        s = self.scenario
        rng = self.engine.rng_stream(f"mobility/{node_id}")
        self._rngs[node_id] = rng
        profile = s.profile(node_id)
        waypoint = init_waypoint(node_id, s.area, profile, rng)
        self.mobility_log.append((0.0, node_id, waypoint.destination))
        return NodeState(
            node_id=node_id,
            node_class=s.node_class(node_id),
            profile=profile,
            waypoint=waypoint,
            energy=EnergyState(initial=s.initial_energy(node_id), p_tx=s.p_tx, p_rx=s.p_rx),
            queue=NodeQueue(s.queue_capacity),
        )

    def _schedule_mobility(self, node: NodeState) -> None:
        fire_time, kind = node.waypoint.next_event()
        node.mobility_event = self.engine.schedule_at(fire_time, kind, node.node_id)

    def _on_mobility(self, event: SimEvent) -> None:
        node = self.network.nodes[event.payload]
        if not node.energy.alive:
            return
        step = on_waypoint_reached if event.kind is EventKind.WAYPOINT_REACHED else on_pause_end
        node.waypoint = step(
            node.node_id, node.waypoint, node.profile, self.scenario.area, self._rngs[node.node_id], self.engine.clock
        )
        self.mobility_log.append((self.engine.clock, node.node_id, node.waypoint.destination))
        self._schedule_mobility(node)

    def _schedule_send(self, flow: CbrFlow, times: List[float], k: int) -> None:
        if k < len(times):
            self.engine.schedule_at(times[k], EventKind.CBR_SEND, (flow, times, k))

    def _on_cbr_send(self, event: SimEvent) -> None:
        flow, times, k = event.payload
        pkt = DataPacket(
            pkt_id=self.router.new_packet_id(),
            src=flow.src,
            dst=flow.dst,
            deadline=flow.deadline,
            generated_at=self.engine.clock,
            size_bytes=flow.packet_size,
            flow_id=flow.flow_id,
        )
        self.router.send_data(flow.src, pkt)
        self._schedule_send(flow, times, k + 1)

    def _on_sim_end(self, event: SimEvent) -> None:
        self.ended_at = self.engine.clock

    def run(self) -> List[TraceEvent]:
        s = self.scenario
        for node in self.network.nodes.values():
            self._schedule_mobility(node)
        for flow in s.flows:
            self._schedule_send(flow, cbr_schedule(flow), 0)
        self.engine.schedule_at(s.duration, EventKind.SIM_END)
        self.engine.run_until(s.duration)
        # events sharing the end instant may fire after SimEnd, so the flush waits for run_until
        flushed = self.tracer.flush_outstanding(s.duration)
        if flushed:
            logger.debug(f"{flushed} CBR packets still in the network at t={s.duration}")
        return self.tracer.events

    def ledger(self) -> List[LedgerRow]:
        return [
            LedgerRow(
                node=n.node_id,
                node_class=n.node_class.value,
                initial_j=n.energy.initial,
                residual_j=n.energy.residual,
                tx_s=n.energy.tx_seconds,
                rx_s=n.energy.rx_seconds,
            )
            for n in sorted(self.network.nodes.values(), key=lambda n: n.node_id)
        ]


@dataclass
class RunResult:
    scenario: str
    policy: str
    seed: int
    report: MetricsReport
    events: List[TraceEvent]
    ledger: List[LedgerRow]
    trace_path: Optional[Path] = None
    wall_time_s: float = 0.0
    mobility_log: List[Tuple[float, int, Point]] = field(default_factory=list)

    @property
    def ledger_path(self) -> Optional[Path]:
        return energy_ledger_path(self.trace_path) if self.trace_path else None


def run_scenario(scenario: Scenario, seed: int, trace_path=None) -> RunResult:
    """Run one replication; with trace_path the trace and its energy ledger are written."""
    start = time.time()
    logger.info(f"Run start: {scenario.name} policy={scenario.policy.name} seed={seed}")
    if trace_path is not None:
        trace_path = Path(trace_path)
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with trace_path.open("w", encoding="utf-8", newline="\n") as f:
            sim = Simulation(scenario, seed, f)
            events = sim.run()
        write_energy_ledger(energy_ledger_path(trace_path), sim.ledger())
    else:
        sim = Simulation(scenario, seed)
        events = sim.run()

    ledger = sim.ledger()
    report = compute_report(
        events, ledger, scenario.n_smh, scenario.duration, scenario.deadline_s, scenario.packet_size
    )
    wall = time.time() - start
    logger.info(
        f"Run finished in {wall:.2f}s: delivered {report.delivered}/{report.generated}, "
        f"lifetime_smh={report.lifetime_smh:.3f}"
    )
    if report.lifetime_censored:
        logger.warning(f"No SMH node died within {scenario.duration:g} s (lifetime censored)")
    return RunResult(
        scenario=scenario.name,
        policy=scenario.policy.name,
        seed=seed,
        report=report,
        events=events,
        ledger=ledger,
        trace_path=trace_path,
        wall_time_s=wall,
        mobility_log=list(sim.mobility_log),
    )


def run_single(scenario: Scenario, seed: int, point: Dict[str, Any]) -> Dict[str, Any]:
    """Batch worker: one replication as a flat result record (never raises)."""
    record: Dict[str, Any] = {
        "scenario": scenario.name,
        "policy": scenario.policy.name,
        "seed": seed,
        "rate_pps": scenario.rate_pps,
        "nodes": scenario.n_nodes,
        "deadline_s": scenario.deadline_s,
        "point": point,
    }
    start = time.time()
    try:
        result = run_scenario(scenario, seed)
    except Exception as e:
        record.update(status="error", error=f"{type(e).__name__}: {e}", duration_ms=int((time.time() - start) * 1000))
        return record
    record.update(
        status="ok",
        error=None,
        duration_ms=int(result.wall_time_s * 1000),
        report=result.report.to_dict(),
    )
    return record
