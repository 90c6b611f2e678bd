"""
Module: mobility
Purpose: Random waypoint movement inside a rectangular area, with per-class
         speed and pause parameters (SMH walkers, LMH vehicles).

Positions are never ticked; they are sampled on demand with position_at().
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from scripts.engine import EventKind, RngStream

Point = Tuple[float, float]
Area = Tuple[float, float]


class Phase(str, Enum):
    MOVING = "Moving"
    PAUSED = "Paused"


@dataclass(frozen=True)
class MobilityProfile:
    v_max: float
    v_min: float = 0.1
    pause: float = 0.0

    def __post_init__(self):
        if self.v_max <= 0:
            raise ValueError(f"v_max must be > 0, got {self.v_max}")
        if self.v_min <= 0:
            raise ValueError(f"v_min must be > 0, got {self.v_min}")
        if self.pause < 0:
            raise ValueError(f"pause must be >= 0, got {self.pause}")

    def draw_speed(self, rng: RngStream) -> float:
        low = min(self.v_min, self.v_max)
        return rng.uniform(low, self.v_max)


@dataclass(frozen=True)
class WaypointState:
    origin: Point
    destination: Point
    speed: float
    depart_time: float
    phase: Phase = Phase.MOVING
    pause_until: float = 0.0

    @property
    def leg_length(self) -> float:
        return math.hypot(self.destination[0] - self.origin[0], self.destination[1] - self.origin[1])

    @property
    def arrival_time(self) -> float:
        if self.phase is Phase.PAUSED:
            return self.depart_time
        return self.depart_time + self.leg_length / self.speed

    def next_event(self) -> Tuple[float, EventKind]:
        if self.phase is Phase.PAUSED:
            return self.pause_until, EventKind.PAUSE_END
        return self.arrival_time, EventKind.WAYPOINT_REACHED


def random_point(area: Area, rng: RngStream) -> Point:
    return (rng.uniform(0.0, area[0]), rng.uniform(0.0, area[1]))


def _start_leg(origin: Point, now: float, area: Area, profile: MobilityProfile, rng: RngStream) -> WaypointState:
    destination = random_point(area, rng)
    return WaypointState(
        origin=origin,
        destination=destination,
        speed=profile.draw_speed(rng),
        depart_time=now,
        phase=Phase.MOVING,
    )


def init_waypoint(node_id: int, area: Area, profile: MobilityProfile, rng: RngStream, now: float = 0.0) -> WaypointState:
    """Uniform initial position, then the first leg is drawn immediately."""
    if area[0] <= 0 or area[1] <= 0:
        raise ValueError(f"area dimensions must be > 0, got {area} for node {node_id}")
    start = random_point(area, rng)
    return _start_leg(start, now, area, profile, rng)


def position_at(state: WaypointState, t: float) -> Point:
    if state.phase is Phase.PAUSED:
        return state.origin
    length = state.leg_length
    travelled = state.speed * max(0.0, t - state.depart_time)
    if length == 0.0 or travelled >= length:
        return state.destination
    frac = travelled / length
    ox, oy = state.origin
    dx, dy = state.destination
    return (ox + frac * (dx - ox), oy + frac * (dy - oy))


def on_waypoint_reached(
    node_id: int, state: WaypointState, profile: MobilityProfile, area: Area, rng: RngStream, now: float
) -> WaypointState:
    """Pause at the waypoint if the class has a pause time, otherwise start the next leg."""
    here = state.destination
    if profile.pause > 0:
        return WaypointState(
            origin=here,
            destination=here,
            speed=0.0,
            depart_time=now,
            phase=Phase.PAUSED,
            pause_until=now + profile.pause,
        )
    return _start_leg(here, now, area, profile, rng)


def on_pause_end(
    node_id: int, state: WaypointState, profile: MobilityProfile, area: Area, rng: RngStream, now: float
) -> WaypointState:
    return _start_leg(state.origin, now, area, profile, rng)
