"""
Module: netmodel
Purpose: Unit-disk radio, per-hop transmission delay, transmit/receive energy
         accounting, node death on depletion, and the drop-tail node queue.

The channel is ideal: no collisions, no frame loss. Contention shows up only
as queueing. Broadcast reception is charged to every alive node in range;
unicast reception only to the addressed next hop.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Deque, Dict, List, Optional, Protocol, Sequence, Set

import numpy as np

from scripts.engine import Engine, EventKind, SimEvent
from scripts.mobility import MobilityProfile, WaypointState, position_at
from scripts.traffic_metrics import DropReason, TraceKind, Tracer

logger = logging.getLogger(__name__)

BROADCAST = -1


class NodeClass(str, Enum):
    SMH = "SMH"
    LMH = "LMH"


class QueueVerdict(str, Enum):
    ACCEPTED = "Accepted"
    DROPPED = "Dropped"


@dataclass
class EnergyState:
    initial: float
    p_tx: float
    p_rx: float
    residual: float = field(init=False)
    tx_seconds: float = 0.0
    rx_seconds: float = 0.0

    def __post_init__(self):
        self.residual = self.initial

    @property
    def alive(self) -> bool:
        return self.residual > 0

    @property
    def consumed(self) -> float:
        return self.initial - self.residual

    def spend_tx(self, seconds: float) -> bool:
        """Charge a transmission; True if this charge depleted the battery."""
        return self._spend(self.p_tx * seconds, tx=seconds)

    def spend_rx(self, seconds: float) -> bool:
        return self._spend(self.p_rx * seconds, rx=seconds)

    def _spend(self, joules: float, tx: float = 0.0, rx: float = 0.0) -> bool:
        was_alive = self.alive
        self.residual -= joules
        self.tx_seconds += tx
        self.rx_seconds += rx
        return was_alive and not self.alive


@dataclass(frozen=True)
class QueuedPacket:
    packet: object
    next_hop: int


class NodeQueue:
    """Drop-tail queue; control packets are served ahead of data, FIFO within a class."""

    def __init__(self, capacity: int = 50):
        if capacity <= 0:
            raise ValueError(f"queue capacity must be > 0, got {capacity}")
        self.capacity = capacity
        self._control: Deque[QueuedPacket] = deque()
        self._data: Deque[QueuedPacket] = deque()

    def __len__(self) -> int:
        return len(self._control) + len(self._data)

    def enqueue(self, packet, next_hop: int) -> QueueVerdict:
        if len(self) >= self.capacity:
            return QueueVerdict.DROPPED
        lane = self._control if packet.is_control else self._data
        lane.append(QueuedPacket(packet, next_hop))
        return QueueVerdict.ACCEPTED

    def pop(self) -> QueuedPacket:
        if self._control:
            return self._control.popleft()
        return self._data.popleft()

    def drain(self) -> List[QueuedPacket]:
        items = list(self._control) + list(self._data)
        self._control.clear()
        self._data.clear()
        return items

    def data_packets(self) -> List[object]:
        return [q.packet for q in self._data]


@dataclass(frozen=True)
class LinkParams:
    range_m: float = 250.0
    bitrate: float = 2_000_000.0

    def __post_init__(self):
        if self.range_m <= 0 or self.bitrate <= 0:
            raise ValueError(f"range and bitrate must be > 0, got {self.range_m} / {self.bitrate}")

    def t_tx(self, size_bytes: int) -> float:
        return size_bytes * 8 / self.bitrate


@dataclass
class NodeState:
    node_id: int
    node_class: NodeClass
    profile: MobilityProfile
    waypoint: WaypointState
    energy: EnergyState
    queue: NodeQueue
    busy: bool = False
    mobility_event: Optional[SimEvent] = None
    death_handled: bool = False


@dataclass(frozen=True)
class Arrival:
    receiver: int
    sender: int
    packet: object


@dataclass(frozen=True)
class ServiceStep:
    node: int
    queued: Optional[QueuedPacket] = None


class PacketHandler(Protocol):
    def on_receive(self, node: int, packet, sender: int) -> None: ...

    def on_transmit_ready(self, node: int, queued: QueuedPacket) -> bool: ...


class Network:
    def __init__(self, engine: Engine, nodes: Sequence[NodeState], link: LinkParams,
                 t_local: float, tracer: Tracer):
        self.engine = engine
        self.nodes: Dict[int, NodeState] = {n.node_id: n for n in nodes}
        self.link = link
        self.t_local = t_local
        self.tracer = tracer
        self.handler: Optional[PacketHandler] = None
        engine.on(EventKind.QUEUE_SERVICE, self._on_service)
        engine.on(EventKind.PACKET_ARRIVAL, self._on_arrival)
        engine.on(EventKind.NODE_DEATH, self._on_death)

    def attach(self, handler: PacketHandler) -> None:
        self.handler = handler

    # --- geometry ---

    def position(self, node_id: int, t: Optional[float] = None):
        t = self.engine.clock if t is None else t
        return position_at(self.nodes[node_id].waypoint, t)

    def distance(self, a: int, b: int, t: Optional[float] = None) -> float:
        ax, ay = self.position(a, t)
        bx, by = self.position(b, t)
        return math.hypot(ax - bx, ay - by)

    def alive(self, node_id: int) -> bool:
        return self.nodes[node_id].energy.alive

    def neighbors(self, node_id: int, t: Optional[float] = None) -> Set[int]:
        """Alive nodes within range (closed disk) of an alive node."""
        if not self.alive(node_id):
            return set()
        others = [n for n in self.nodes if n != node_id and self.alive(n)]
        if not others:
            return set()
        origin = np.asarray(self.position(node_id, t))
        points = np.asarray([self.position(n, t) for n in others])
        dist = np.hypot(points[:, 0] - origin[0], points[:, 1] - origin[1])
        return {n for n, d in zip(others, dist) if d <= self.link.range_m}

    def reachable(self, a: int, b: int, t: Optional[float] = None) -> bool:
        return (
            a != b
            and self.alive(a)
            and self.alive(b)
            and self.distance(a, b, t) <= self.link.range_m
        )

    # --- queueing ---

    def enqueue(self, node_id: int, packet, next_hop: int) -> QueueVerdict:
        node = self.nodes[node_id]
        if not node.energy.alive:
            self._trace_drop(node_id, packet, DropReason.DEAD)
            return QueueVerdict.DROPPED
        verdict = node.queue.enqueue(packet, next_hop)
        if verdict is QueueVerdict.DROPPED:
            self._trace_drop(node_id, packet, DropReason.QUEUE_FULL)
            return verdict
        if not node.busy:
            node.busy = True
            self.engine.schedule_in(0.0, EventKind.QUEUE_SERVICE, ServiceStep(node_id))
        return verdict

    def service_queue(self, node_id: int) -> QueuedPacket:
        """Take the head-of-line packet; it is transmitted after T_L."""
        queued = self.nodes[node_id].queue.pop()
        self.engine.schedule_in(self.t_local, EventKind.QUEUE_SERVICE, ServiceStep(node_id, queued))
        return queued

    def _on_service(self, event: SimEvent) -> None:
        step: ServiceStep = event.payload
        node = self.nodes[step.node]
        if step.queued is None:
            if not node.energy.alive or len(node.queue) == 0:
                node.busy = False
                return
            self.service_queue(step.node)
            return

        if not node.energy.alive:
            self._trace_drop(step.node, step.queued.packet, DropReason.DEAD)
            node.busy = False
            return
        # the radio is held for t_tx only if something actually went on air
        tx_before = node.energy.tx_seconds
        if self.handler is None or self.handler.on_transmit_ready(step.node, step.queued):
            self.transmit(step.node, step.queued.next_hop, step.queued.packet)
        hold = self.link.t_tx(step.queued.packet.size_bytes) if node.energy.tx_seconds != tx_before else 0.0
        self.engine.schedule_in(hold, EventKind.QUEUE_SERVICE, ServiceStep(step.node))

    # --- radio ---

    def transmit(self, src: int, dst: int, packet) -> List[SimEvent]:
        """Send one packet; returns the scheduled arrival events (empty if nobody hears it)."""
        node = self.nodes[src]
        if not node.energy.alive:
            self._trace_drop(src, packet, DropReason.DEAD)
            return []
        now = self.engine.clock
        if dst == BROADCAST:
            receivers = sorted(self.neighbors(src, now))
        elif self.reachable(src, dst, now):
            receivers = [dst]
        else:
            return []
        duration = self.link.t_tx(packet.size_bytes)
        if node.energy.spend_tx(duration):
            self._schedule_death(src)
        arrivals = []
        for r in receivers:
            if self.nodes[r].energy.spend_rx(duration):
                self._schedule_death(r)
            arrivals.append(
                self.engine.schedule_in(duration, EventKind.PACKET_ARRIVAL, Arrival(r, src, packet))
            )
        return arrivals

    def _on_arrival(self, event: SimEvent) -> None:
        arrival: Arrival = event.payload
        if not self.alive(arrival.receiver):
            self._trace_drop(arrival.receiver, arrival.packet, DropReason.DEAD)
            return
        if self.handler is not None:
            self.handler.on_receive(arrival.receiver, arrival.packet, arrival.sender)

    # --- death ---

    def _schedule_death(self, node_id: int) -> None:
        self.engine.schedule_in(0.0, EventKind.NODE_DEATH, node_id)

    def _on_death(self, event: SimEvent) -> None:
        node = self.nodes[event.payload]
        if node.death_handled:
            return
        node.death_handled = True
        now = self.engine.clock
        self.tracer.die(now, node.node_id)
        logger.debug(f"node {node.node_id} ({node.node_class.value}) depleted at t={now:.6f}")
        for queued in node.queue.drain():
            self._trace_drop(node.node_id, queued.packet, DropReason.DEAD)
        if node.mobility_event is not None:
            node.mobility_event.cancel()
            node.mobility_event = None

    def _trace_drop(self, node_id: int, packet, reason: DropReason) -> None:
        self.tracer.record(self.engine.clock, TraceKind.DROP, node_id, packet.pkt_id, packet.kind, reason)
