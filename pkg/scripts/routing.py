"""
Module: routing
Purpose: DSR per node (route discovery, route reply, route cache, send buffer,
         source-routed forwarding, route error) with the hooks where ED-DSR and
         the other policies plug in.

Flow for one CBR packet (see send_data):
    cache hit  -> forward_data along the cached source route
    cache miss -> hold in the source's send buffer, flood an RREQ, collect RREPs
                  for rrep_window seconds, select a route, flush the buffer;
                  with no candidate, retry with exponential backoff while the
                  buffer still holds packets

Buffered packets leave as `no_route` after send_buffer_timeout; deadline-aware
policies drop them as `expired` once they outlive their deadline. A source whose
first link breaks puts the packet back into the send buffer.

Intermediate nodes never answer RREQs from their caches; only the target replies,
once per RREQ copy, so every candidate carries fresh stamps. Rebroadcasts wait a
uniform jitter in [0, rreq_jitter] so the flood does not favour low node ids.
"""
import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import ClassVar, Dict, List, Optional, Sequence, Set, Tuple

from scripts.engine import Engine, EventKind, SimEvent
from scripts.netmodel import BROADCAST, Network, QueuedPacket, QueueVerdict
from scripts.policies import PolicyPreset
from scripts.qos_policies import (
    Admission,
    CostBreakdown,
    EmrpStamp,
    NodeStatusStamp,
    QosConfig,
    RrepVerdict,
    RtdsrParams,
    deadline_feasible,
    rrep_admission_check,
    rtdsr_admission,
    score_route,
    select_min_cost,
    select_shortest,
    stamp_status,
)
from scripts.traffic_metrics import DropReason, TraceKind, Tracer, trace_time

logger = logging.getLogger(__name__)

Route = Tuple[int, ...]
RequestId = Tuple[int, int]


class NoRouteError(RuntimeError):
    """Route discovery finished without a usable candidate."""


@dataclass(frozen=True)
class ControlSizes:
    rreq_base: int = 32
    rreq_hop: int = 4
    rrep_base: int = 44
    rrep_stamp: int = 16
    rerr: int = 24

    def rreq(self, route_len: int) -> int:
        return self.rreq_base + self.rreq_hop * route_len

    def rrep(self, stamp_count: int) -> int:
        return self.rrep_base + self.rrep_stamp * stamp_count


@dataclass(frozen=True)
class RoutingSettings:
    rrep_window: float = 0.5
    cache_timeout: float = 5.0
    sizes: ControlSizes = ControlSizes()
    # send buffer and discovery retries, ns-2 DSR values
    send_buffer_capacity: int = 64
    send_buffer_timeout: float = 30.0
    retry_backoff_max: float = 10.0
    rreq_jitter: float = 0.0

    def retry_delay(self, attempts: int) -> float:
        """Wait after the attempts-th failed discovery: rrep_window doubling up to retry_backoff_max."""
        return min(self.rrep_window * 2 ** (attempts - 1), self.retry_backoff_max)


# --- packets ---

@dataclass
class DataPacket:
    pkt_id: int
    src: int
    dst: int
    deadline: float
    generated_at: float
    size_bytes: int = 512
    flow_id: int = 0
    route: Route = ()
    hop_index: int = 0
    visited: List[int] = field(default_factory=list)
    delivered_at: Optional[float] = None

    kind: ClassVar[str] = "CBR"
    is_control: ClassVar[bool] = False


@dataclass(frozen=True)
class Rreq:
    pkt_id: int
    request_id: RequestId
    origin: int
    target: int
    accumulated_route: Route
    deadline: float
    size_bytes: int

    kind: ClassVar[str] = "RREQ"
    is_control: ClassVar[bool] = True


@dataclass(frozen=True)
class Rrep:
    pkt_id: int
    request_id: RequestId
    route: Route
    deadline: float
    hop_index: int
    size_bytes: int
    stamps: Tuple[NodeStatusStamp, ...] = ()
    emrp_stamps: Tuple[EmrpStamp, ...] = ()
    cost: float = 0.0
    c_delay: float = 0.0

    kind: ClassVar[str] = "RREP"
    is_control: ClassVar[bool] = True

    @property
    def origin(self) -> int:
        return self.route[0]

    @property
    def target(self) -> int:
        return self.route[-1]


@dataclass(frozen=True)
class Rerr:
    pkt_id: int
    broken_link: Tuple[int, int]
    # detecting node first, data source last
    path: Route
    hop_index: int
    size_bytes: int

    kind: ClassVar[str] = "RERR"
    is_control: ClassVar[bool] = True


@dataclass(frozen=True)
class RouteCandidate:
    route: Route
    stamps: Tuple[NodeStatusStamp, ...]
    emrp_stamps: Tuple[EmrpStamp, ...]
    cost_breakdown: CostBreakdown
    cost: float = 0.0
    c_delay: float = 0.0

    @property
    def hops(self) -> int:
        return len(self.route) - 1


@dataclass
class RouteCacheEntry:
    route: Route
    cost_breakdown: CostBreakdown
    inserted_at: float


@dataclass
class PendingDiscovery:
    """Send buffer for one destination plus the discovery currently serving it."""
    dst: int
    deadline: float
    opened_at: float
    request_id: RequestId = (-1, -1)
    attempts: int = 0
    # exactly one of the two is set while the entry lives
    window_event: Optional[SimEvent] = None
    retry_event: Optional[SimEvent] = None
    candidates: List[RouteCandidate] = field(default_factory=list)
    buffer: List[DataPacket] = field(default_factory=list)


@dataclass
class NodeRoutingState:
    seen: Set[RequestId] = field(default_factory=set)
    cache: Dict[int, RouteCacheEntry] = field(default_factory=dict)
    pending: Dict[int, PendingDiscovery] = field(default_factory=dict)
    counter: int = 0


class Discovery(str, Enum):
    CACHED = "Cached"
    STARTED = "Started"
    SUPPRESSED = "Suppressed"


class RreqAction(str, Enum):
    REBROADCAST = "Rebroadcast"
    REPLY = "Reply"
    DROP = "Drop"


class RrepAction(str, Enum):
    FORWARD_TOWARD_SOURCE = "ForwardTowardSource"
    DISCARD = "Discard"
    DELIVER_TO_ORIGIN = "DeliverToOrigin"


class ForwardAction(str, Enum):
    NEXT_HOP = "NextHop"
    DELIVER = "Deliver"
    BUFFERED = "Buffered"
    DROP_EXPIRED = "DropExpired"
    DROP_BROKEN = "DropBroken"
    DROP_QUEUE_FULL = "DropQueueFull"


def route_has_link(route: Sequence[int], link: Tuple[int, int]) -> bool:
    return any((a, b) == link for a, b in zip(route, route[1:]))


class DsrRouter:
    def __init__(
        self,
        engine: Engine,
        network: Network,
        tracer: Tracer,
        policy: PolicyPreset,
        qos: QosConfig,
        settings: RoutingSettings = RoutingSettings(),
    ):
        self.engine = engine
        self.network = network
        self.tracer = tracer
        self.policy = policy
        self.qos = qos
        self.settings = settings
        self.state: Dict[int, NodeRoutingState] = {n: NodeRoutingState() for n in network.nodes}
        self.delivered: List[DataPacket] = []
        self.selections: List[Tuple[float, int, int, Route]] = []
        self._pkt_ids = itertools.count()
        self._jitter = engine.rng_stream("routing/jitter")
        network.attach(self)
        engine.on(EventKind.RREP_WINDOW_CLOSE, self._on_window_close)
        engine.on(EventKind.DISCOVERY_RETRY, self._on_discovery_retry)
        engine.on(EventKind.RREQ_REBROADCAST, self._on_rebroadcast)

    @property
    def now(self) -> float:
        return self.engine.clock

    def new_packet_id(self) -> int:
        return next(self._pkt_ids)

    def _trace(self, kind: TraceKind, node: int, packet, reason: DropReason = DropReason.NONE) -> None:
        self.tracer.record(self.now, kind, node, packet.pkt_id, packet.kind, reason)

    def _expired(self, pkt: DataPacket) -> bool:
        return trace_time(self.now) - trace_time(pkt.generated_at) > pkt.deadline

    # --- route cache ---

    def fresh_route(self, node: int, dst: int) -> Optional[RouteCacheEntry]:
        cache = self.state[node].cache
        entry = cache.get(dst)
        if entry is None:
            return None
        if self.now - entry.inserted_at < self.settings.cache_timeout:
            return entry
        del cache[dst]
        return None

    def purge_link(self, node: int, link: Tuple[int, int]) -> int:
        cache = self.state[node].cache
        stale = [dst for dst, entry in cache.items() if route_has_link(entry.route, link)]
        for dst in stale:
            del cache[dst]
        return len(stale)

    # --- data origination ---

    def send_data(self, src: int, pkt: DataPacket) -> None:
        """Entry point for a freshly generated CBR packet."""
        self._trace(TraceKind.SEND, src, pkt)
        pkt.visited.append(src)
        if not self.network.alive(src):
            self._trace(TraceKind.DROP, src, pkt, DropReason.DEAD)
            return
        entry = self.fresh_route(src, pkt.dst)
        if entry is not None:
            pkt.route = entry.route
            pkt.hop_index = 0
            self.forward_data(src, pkt)
            return
        self.buffer_packet(src, pkt)

    def buffer_packet(self, src: int, pkt: DataPacket) -> bool:
        """Hold a packet until a route to its destination is known; False if it was dropped."""
        st = self.state[src]
        if pkt.dst not in st.pending:
            # a re-buffered packet may find a route that was cached after it left
            entry = self.fresh_route(src, pkt.dst)
            if entry is not None:
                pkt.route = entry.route
                pkt.hop_index = 0
                return self.forward_data(src, pkt) in (ForwardAction.NEXT_HOP, ForwardAction.BUFFERED)
            self.originate_discovery(src, pkt.dst, pkt.deadline)
        pending = st.pending[pkt.dst]
        self._sweep_buffer(src, pending)
        if len(pending.buffer) >= self.settings.send_buffer_capacity:
            self._trace(TraceKind.DROP, src, pkt, DropReason.QUEUE_FULL)
            return False
        pending.buffer.append(pkt)
        return True

    def _sweep_buffer(self, src: int, pending: PendingDiscovery) -> None:
        kept = []
        for pkt in pending.buffer:
            if self.policy.deadline_aware and self._expired(pkt):
                self._trace(TraceKind.DROP, src, pkt, DropReason.EXPIRED)
            elif self.now - pkt.generated_at > self.settings.send_buffer_timeout:
                self._trace(TraceKind.DROP, src, pkt, DropReason.NO_ROUTE)
            else:
                kept.append(pkt)
        pending.buffer = kept

    def originate_discovery(self, src: int, dst: int, deadline: float) -> Discovery:
        st = self.state[src]
        if self.fresh_route(src, dst) is not None:
            return Discovery.CACHED
        if dst in st.pending:
            return Discovery.SUPPRESSED
        pending = PendingDiscovery(dst=dst, deadline=deadline, opened_at=self.now)
        st.pending[dst] = pending
        self._flood_request(src, pending)
        return Discovery.STARTED

    def _flood_request(self, src: int, pending: PendingDiscovery) -> None:
        st = self.state[src]
        st.counter += 1
        request_id = (src, st.counter)
        st.seen.add(request_id)
        rreq = Rreq(
            pkt_id=self.new_packet_id(),
            request_id=request_id,
            origin=src,
            target=pending.dst,
            accumulated_route=(src,),
            deadline=pending.deadline,
            size_bytes=self.settings.sizes.rreq(1),
        )
        pending.request_id = request_id
        pending.attempts += 1
        pending.candidates = []
        pending.window_event = self.engine.schedule_in(
            self.settings.rrep_window, EventKind.RREP_WINDOW_CLOSE, (src, pending.dst)
        )
        logger.debug(
            f"t={self.now:.6f} node {src} starts discovery {request_id} for {pending.dst} "
            f"(attempt {pending.attempts})"
        )
        self._trace(TraceKind.SEND, src, rreq)
        self.network.enqueue(src, rreq, BROADCAST)

    # --- reception ---

    def on_receive(self, node: int, packet, sender: int) -> None:
        if isinstance(packet, DataPacket):
            packet.hop_index += 1
            packet.visited.append(node)
            self.forward_data(node, packet)
        elif isinstance(packet, Rreq):
            self.handle_rreq(node, packet)
        elif isinstance(packet, Rrep):
            self.handle_rrep(node, replace(packet, hop_index=packet.hop_index - 1))
        elif isinstance(packet, Rerr):
            self.handle_rerr(node, replace(packet, hop_index=packet.hop_index + 1))
        else:
            raise TypeError(f"unknown packet type {type(packet).__name__}")

    def handle_rreq(self, node: int, rreq: Rreq) -> RreqAction:
        if not self.network.alive(node):
            return RreqAction.DROP
        if node == rreq.target and node not in rreq.accumulated_route:
            route = rreq.accumulated_route + (node,)
            self._trace(TraceKind.RECV, node, rreq)
            rrep = Rrep(
                pkt_id=self.new_packet_id(),
                request_id=rreq.request_id,
                route=route,
                deadline=rreq.deadline,
                hop_index=len(route) - 1,
                size_bytes=self.settings.sizes.rrep(0),
            )
            self._trace(TraceKind.SEND, node, rrep)
            self.network.enqueue(node, rrep, route[-2])
            return RreqAction.REPLY
        st = self.state[node]
        if rreq.request_id in st.seen or node in rreq.accumulated_route:
            self._trace(TraceKind.DROP, node, rreq, DropReason.DUPLICATE)
            return RreqAction.DROP
        st.seen.add(rreq.request_id)
        route = rreq.accumulated_route + (node,)
        copy = replace(rreq, accumulated_route=route, size_bytes=self.settings.sizes.rreq(len(route)))
        self._trace(TraceKind.FWD, node, copy)
        if self.settings.rreq_jitter > 0:
            delay = self._jitter.uniform(0.0, self.settings.rreq_jitter)
            self.engine.schedule_in(delay, EventKind.RREQ_REBROADCAST, (node, copy))
        else:
            self.network.enqueue(node, copy, BROADCAST)
        return RreqAction.REBROADCAST

    def _on_rebroadcast(self, event: SimEvent) -> None:
        node, rreq = event.payload
        self.network.enqueue(node, rreq, BROADCAST)

    def handle_rrep(self, node: int, rrep: Rrep) -> RrepAction:
        if node == rrep.origin:
            self._trace(TraceKind.RECV, node, rrep)
            pending = self.state[node].pending.get(rrep.target)
            if pending is None or pending.request_id != rrep.request_id:
                logger.debug(f"t={self.now:.6f} late RREP {rrep.request_id} at {node} ignored")
                return RrepAction.DISCARD
            pending.candidates.append(self.make_candidate(rrep))
            return RrepAction.DELIVER_TO_ORIGIN

        if self.policy.deadline_aware and rrep_admission_check(rrep, rrep.deadline) is RrepVerdict.DISCARD:
            self._trace(TraceKind.DROP, node, rrep, DropReason.EXPIRED)
            return RrepAction.DISCARD
        if self.policy.rtdsr_admission and rtdsr_admission(self._rtdsr_params(node, rrep)) is Admission.REJECT:
            self._trace(TraceKind.DROP, node, rrep, DropReason.EXPIRED)
            return RrepAction.DISCARD

        next_hop = rrep.route[rrep.hop_index - 1]
        downstream = rrep.route[rrep.hop_index + 1]
        if not self.network.reachable(node, next_hop) or not self.network.alive(downstream):
            self._trace(TraceKind.DROP, node, rrep, DropReason.BROKEN_LINK)
            return RrepAction.DISCARD
        if self.policy.stamps:
            rrep = self._stamp(node, rrep, next_hop, downstream)
        self._trace(TraceKind.FWD, node, rrep)
        self.network.enqueue(node, rrep, next_hop)
        return RrepAction.FORWARD_TOWARD_SOURCE

    def _stamp(self, node: int, rrep: Rrep, next_hop: int, downstream: int) -> Rrep:
        state = self.network.nodes[node]
        l_queue = len(state.queue)
        stamp = NodeStatusStamp(
            node=node,
            d_i=self.network.distance(node, next_hop),
            l_queue=l_queue,
            e_remain=state.energy.residual,
        )
        rrep = stamp_status(rrep, stamp, self.qos, len(rrep.route) - 1)
        if self.policy.selector == "emrp":
            down = self.network.nodes[downstream].energy
            emrp = EmrpStamp(
                p_tx=state.energy.p_tx,
                p_rx=down.p_rx,
                e_remain_i=state.energy.residual,
                e_remain_next=down.residual,
                n_retrans=0,
                n_queue=l_queue,
            )
            rrep = replace(rrep, emrp_stamps=rrep.emrp_stamps + (emrp,))
        return replace(rrep, size_bytes=self.settings.sizes.rrep(len(rrep.stamps)))

    def _rtdsr_params(self, node: int, rrep: Rrep) -> RtdsrParams:
        queue = self.network.nodes[node].queue
        admitted = tuple(
            max(0.0, p.deadline - (self.now - p.generated_at)) for p in queue.data_packets()
        )
        return RtdsrParams(
            e_remaining=max(0.0, rrep.deadline - rrep.c_delay),
            t_tl=(len(queue) + 1) * self.qos.t_local,
            t_ts=self.qos.t_trans,
            admitted_deadlines=admitted,
        )

    def make_candidate(self, rrep: Rrep) -> RouteCandidate:
        nodes = self.network.nodes
        breakdown = score_route(
            self.policy.selector,
            rrep.route,
            rrep.stamps,
            self.qos,
            emrp_stamps=rrep.emrp_stamps,
            initial_energy=[nodes[s.node].energy.initial for s in rrep.stamps],
            alw_weights=self.policy.alw_weights,
            window=self.settings.rrep_window,
        )
        return RouteCandidate(
            route=rrep.route,
            stamps=rrep.stamps,
            emrp_stamps=rrep.emrp_stamps,
            cost_breakdown=breakdown,
            cost=rrep.cost,
            c_delay=rrep.c_delay,
        )

    # --- selection ---

    def select_route(self, candidates: Sequence[RouteCandidate], policy: Optional[PolicyPreset] = None) -> RouteCacheEntry:
        policy = policy or self.policy
        if not candidates:
            raise NoRouteError("no route candidates")
        if policy.selector == "hops":
            route = select_shortest([c.route for c in candidates])
            return RouteCacheEntry(route, CostBreakdown(total=float(len(route) - 1)), self.now)
        route = select_min_cost([(c.route, c.cost_breakdown) for c in candidates])
        winner = next(c for c in candidates if c.route == route)
        return RouteCacheEntry(route, winner.cost_breakdown, self.now)

    def _on_window_close(self, event: SimEvent) -> None:
        src, dst = event.payload
        pending = self.state[src].pending.get(dst)
        if pending is None or pending.window_event is not event:
            return
        pending.window_event = None
        if not self.network.alive(src):
            self._abandon(src, pending)
            return
        candidates = pending.candidates
        if self.policy.deadline_aware:
            candidates = [c for c in candidates if deadline_feasible(pending.deadline, [c.c_delay])]
        try:
            entry = self.select_route(candidates)
        except NoRouteError:
            self._sweep_buffer(src, pending)
            if not pending.buffer:
                del self.state[src].pending[dst]
                return
            delay = self.settings.retry_delay(pending.attempts)
            logger.debug(
                f"t={self.now:.6f} no route {src}->{dst} after attempt {pending.attempts}, "
                f"{len(pending.buffer)} buffered, retry in {delay:.3f}s"
            )
            pending.retry_event = self.engine.schedule_in(delay, EventKind.DISCOVERY_RETRY, (src, dst))
            return
        del self.state[src].pending[dst]
        self.state[src].cache[dst] = entry
        self.selections.append((self.now, src, dst, entry.route))
        logger.debug(
            f"t={self.now:.6f} {src}->{dst} selected {entry.route} "
            f"(score {entry.cost_breakdown.total:.6f}, {len(pending.candidates)} candidates)"
        )
        self._sweep_buffer(src, pending)
        for pkt in pending.buffer:
            pkt.route = entry.route
            pkt.hop_index = 0
            self.forward_data(src, pkt)

    def _on_discovery_retry(self, event: SimEvent) -> None:
        src, dst = event.payload
        pending = self.state[src].pending.get(dst)
        if pending is None or pending.retry_event is not event:
            return
        pending.retry_event = None
        if not self.network.alive(src):
            self._abandon(src, pending)
            return
        self._sweep_buffer(src, pending)
        if not pending.buffer:
            del self.state[src].pending[dst]
            return
        self._flood_request(src, pending)

    def _abandon(self, src: int, pending: PendingDiscovery) -> None:
        del self.state[src].pending[pending.dst]
        for pkt in pending.buffer:
            self._trace(TraceKind.DROP, src, pkt, DropReason.DEAD)

    # --- forwarding ---

    def forward_data(self, node: int, pkt: DataPacket) -> ForwardAction:
        if self.policy.deadline_aware and self._expired(pkt):
            self._trace(TraceKind.DROP, node, pkt, DropReason.EXPIRED)
            return ForwardAction.DROP_EXPIRED
        if node == pkt.route[-1]:
            pkt.delivered_at = self.now
            self.delivered.append(pkt)
            self._trace(TraceKind.RECV, node, pkt)
            return ForwardAction.DELIVER
        next_hop = pkt.route[pkt.hop_index + 1]
        if not self.network.reachable(node, next_hop):
            if node == pkt.src:
                self.report_broken_link(node, next_hop, pkt)
                return ForwardAction.BUFFERED if self.buffer_packet(node, pkt) else ForwardAction.DROP_QUEUE_FULL
            self._trace(TraceKind.DROP, node, pkt, DropReason.BROKEN_LINK)
            self.report_broken_link(node, next_hop, pkt)
            return ForwardAction.DROP_BROKEN
        if node != pkt.src:
            self._trace(TraceKind.FWD, node, pkt)
        if self.network.enqueue(node, pkt, next_hop) is QueueVerdict.DROPPED:
            return ForwardAction.DROP_QUEUE_FULL
        return ForwardAction.NEXT_HOP

    def on_transmit_ready(self, node: int, queued: QueuedPacket) -> bool:
        """Last check before a queued packet goes on air; False means it did not go out."""
        pkt = queued.packet
        if isinstance(pkt, DataPacket):
            if self.policy.deadline_aware and self._expired(pkt):
                self._trace(TraceKind.DROP, node, pkt, DropReason.EXPIRED)
                return False
            if not self.network.reachable(node, queued.next_hop):
                self.report_broken_link(node, queued.next_hop, pkt)
                if node == pkt.src:
                    self.buffer_packet(node, pkt)
                else:
                    self._trace(TraceKind.DROP, node, pkt, DropReason.BROKEN_LINK)
                return False
            return True
        if queued.next_hop != BROADCAST and not self.network.reachable(node, queued.next_hop):
            self._trace(TraceKind.DROP, node, pkt, DropReason.BROKEN_LINK)
            return False
        return True

    # --- route maintenance ---

    def report_broken_link(self, node: int, next_hop: int, pkt: DataPacket) -> None:
        link = (node, next_hop)
        self.purge_link(node, link)
        if node == pkt.src:
            return
        path = tuple(reversed(pkt.route[: pkt.hop_index + 1]))
        rerr = Rerr(
            pkt_id=self.new_packet_id(),
            broken_link=link,
            path=path,
            hop_index=0,
            size_bytes=self.settings.sizes.rerr,
        )
        self._trace(TraceKind.SEND, node, rerr)
        self.network.enqueue(node, rerr, path[1])

    def handle_rerr(self, node: int, rerr: Rerr) -> None:
        self.purge_link(node, rerr.broken_link)
        if node == rerr.path[-1]:
            self._trace(TraceKind.RECV, node, rerr)
            return
        self._trace(TraceKind.FWD, node, rerr)
        self.network.enqueue(node, rerr, rerr.path[rerr.hop_index + 1])
