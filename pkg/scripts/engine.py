"""
Module: engine
Purpose: Deterministic discrete-event scheduler for the MANET simulator.

Key features:
    - Priority queue of SimEvents ordered by (fire_time, seq); simultaneous events fire FIFO
    - Lazy cancellation (cancelled events are skipped when popped)
    - Labelled, seeded random streams derived from one master seed per replication
"""
import heapq
import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


class EventKind(str, Enum):
    PACKET_ARRIVAL = "PacketArrival"
    QUEUE_SERVICE = "QueueService"
    WAYPOINT_REACHED = "WaypointReached"
    PAUSE_END = "PauseEnd"
    CBR_SEND = "CbrSend"
    RREP_WINDOW_CLOSE = "RrepWindowClose"
    DISCOVERY_RETRY = "DiscoveryRetry"
    RREQ_REBROADCAST = "RreqRebroadcast"
    NODE_DEATH = "NodeDeath"
    SIM_END = "SimEnd"


class PastTimeError(ValueError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(order=True)
class SimEvent:
    fire_time: float
    seq: int = -1
    kind: EventKind = field(default=EventKind.SIM_END, compare=False)
    payload: Any = field(default=None, compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


class RngStream:
    """Independent generator for one labelled concern (mobility, traffic, ...)."""

    def __init__(self, master_seed: int, label: str):
        if master_seed < 0:
            raise ValueError(f"master seed must be >= 0, got {master_seed}")
        self.label = label
        self.master_seed = master_seed
        # crc32, never hash(): str hashing is salted per process
        entropy = [master_seed, zlib.crc32(label.encode("utf-8"))]
        self._gen = np.random.default_rng(np.random.SeedSequence(entropy))

    def random(self) -> float:
        return float(self._gen.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self._gen.uniform(low, high))


Handler = Callable[[SimEvent], None]


class Engine:
    def __init__(self, master_seed: int = 0):
        if master_seed < 0:
            raise ValueError(f"master seed must be >= 0, got {master_seed}")
        self.master_seed = master_seed
        self.clock = 0.0
        self._queue: List[SimEvent] = []
        self._seq = 0
        self._handlers: Dict[EventKind, Handler] = {}

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[kind] = handler

    def schedule(self, event: SimEvent) -> SimEvent:
        """Enqueue an event; the returned handle supports cancel()."""
        if event.fire_time < self.clock:
            raise PastTimeError(
                f"cannot schedule {event.kind.value} at t={event.fire_time} (clock={self.clock})"
            )
        event.seq = self._seq
        self._seq += 1
        heapq.heappush(self._queue, event)
        return event

    def schedule_at(self, fire_time: float, kind: EventKind, payload: Any = None) -> SimEvent:
        return self.schedule(SimEvent(fire_time=fire_time, kind=kind, payload=payload))

    def schedule_in(self, delay: float, kind: EventKind, payload: Any = None) -> SimEvent:
        return self.schedule_at(self.clock + delay, kind, payload)

    def pending(self) -> int:
        return sum(1 for ev in self._queue if not ev.cancelled)

    def peek_time(self) -> Optional[float]:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].fire_time if self._queue else None

    def run_until(self, t_end: float) -> int:
        """Process every event with fire_time <= t_end; returns the number processed."""
        if t_end < self.clock:
            raise PastTimeError(f"run_until({t_end}) is before clock={self.clock}")
        processed = 0
        while self._queue and self._queue[0].fire_time <= t_end:
            event = heapq.heappop(self._queue)
            if event.cancelled:
                continue
            self.clock = event.fire_time
            handler = self._handlers.get(event.kind)
            if handler is None:
                raise KeyError(f"no handler registered for {event.kind.value}")
            handler(event)
            processed += 1
        self.clock = t_end
        logger.debug(f"run_until({t_end}) processed {processed} events")
        return processed

    def rng_stream(self, label: str) -> RngStream:
        return RngStream(self.master_seed, label)
