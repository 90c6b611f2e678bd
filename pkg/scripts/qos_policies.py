"""
Module: qos_policies
Purpose: Route-cost mathematics and route selectors.

    - ED-DSR per-node costs (energy, queue, delay), weighted route cost, deadline check
    - EMRP route weight (energy + queue)
    - RT-DSR admission predicate
    - ALW link weight

Everything here is a pure function over immutable inputs.
Logarithms are natural logs. C is a dimensionless score: alpha carries J/m and gamma 1/s.
"""
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence, Tuple

Route = Tuple[int, ...]

WEIGHT_TOLERANCE = 1e-9
# Presets are printed with two decimals (0.33 * 3 = 0.99)
ALW_WEIGHT_TOLERANCE = 0.015


class DepletedNodeError(ValueError):
    """A node with no remaining energy appeared in a cost computation."""


class EmptyCandidatesError(ValueError):
    """Route selection was asked to choose among zero candidates."""


class WeightSumError(ValueError):
    """Weighting factors do not sum to one."""


@dataclass(frozen=True)
class NodeStatusStamp:
    node: int
    d_i: float
    l_queue: int
    e_remain: float


@dataclass(frozen=True)
class CostBreakdown:
    c_energy: float = 0.0
    c_queue: float = 0.0
    c_delay: float = 0.0
    total: float = 0.0


@dataclass(frozen=True)
class QosConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    w_energy: float = 1.0 / 3.0
    w_queue: float = 1.0 / 3.0
    w_delay: float = 1.0 / 3.0
    t_local: float = 0.005
    t_trans: float = 0.002048
    preset: str = "eddsr"

    @property
    def weights(self) -> Tuple[float, float, float]:
        return (self.w_energy, self.w_queue, self.w_delay)

    def validate(self) -> "QosConfig":
        factors = (self.alpha, self.beta, self.gamma) + self.weights
        if any(f < 0 for f in factors):
            raise ValueError(f"QoS factors must be >= 0, got {factors}")
        check_weight_sum(self.weights, WEIGHT_TOLERANCE)
        return self


@dataclass(frozen=True)
class AlwParams:
    k1: float
    k2: float
    k3: float
    bandwidth: float
    delay: float
    node_lifetime: float


@dataclass(frozen=True)
class RtdsrParams:
    e_remaining: float
    t_tl: float
    t_ts: float
    admitted_deadlines: Tuple[float, ...] = ()


@dataclass(frozen=True)
class EmrpStamp:
    p_tx: float
    p_rx: float
    e_remain_i: float
    e_remain_next: float
    n_retrans: int = 0
    n_queue: int = 0


class Admission(str, Enum):
    ADMIT = "Admit"
    REJECT = "Reject"


class RrepVerdict(str, Enum):
    FORWARD = "Forward"
    DISCARD = "Discard"


def check_weight_sum(weights: Sequence[float], tolerance: float) -> None:
    total = sum(weights)
    if abs(total - 1.0) > tolerance:
        raise WeightSumError(f"weights {tuple(weights)} sum to {total}, expected 1")


# --- ED-DSR ---

def energy_cost(d: float, e_remain: float) -> float:
    if e_remain <= 0:
        raise DepletedNodeError(f"remaining energy must be > 0, got {e_remain}")
    if d < 0:
        raise ValueError(f"distance must be >= 0, got {d}")
    return d / e_remain


def queue_cost(l_queue: int) -> float:
    if l_queue < 0:
        raise ValueError(f"queue length must be >= 0, got {l_queue}")
    return math.log1p(l_queue)


def delay_cost(l_queue: int, t_l: float, t_t: float, n_hops: int) -> float:
    # T_T * N_hops is charged at every stamping node, as the formula is written
    return l_queue * t_l + t_t * n_hops


def weighted_term(c_e: float, c_q: float, c_d: float, cfg: QosConfig) -> float:
    return (
        cfg.w_energy * (cfg.alpha * c_e)
        + cfg.w_queue * (cfg.beta * c_q)
        + cfg.w_delay * (cfg.gamma * c_d)
    )


def node_cost(stamp: NodeStatusStamp, cfg: QosConfig, n_hops: int) -> CostBreakdown:
    """One stamping node's contribution; total is its weighted term."""
    c_e = energy_cost(stamp.d_i, stamp.e_remain)
    c_q = queue_cost(stamp.l_queue)
    c_d = delay_cost(stamp.l_queue, cfg.t_local, cfg.t_trans, n_hops)
    return CostBreakdown(c_energy=c_e, c_queue=c_q, c_delay=c_d, total=weighted_term(c_e, c_q, c_d, cfg))


def route_cost(stamps: Sequence[NodeStatusStamp], cfg: QosConfig, n_hops: int) -> CostBreakdown:
    c_e = c_q = c_d = total = 0.0
    for stamp in stamps:
        part = node_cost(stamp, cfg, n_hops)
        c_e += part.c_energy
        c_q += part.c_queue
        c_d += part.c_delay
        total += part.total
    return CostBreakdown(c_energy=c_e, c_queue=c_q, c_delay=c_d, total=total)


def deadline_feasible(d_k: float, delay_costs: Sequence[float]) -> bool:
    if d_k <= 0:
        raise ValueError(f"deadline must be > 0, got {d_k}")
    return d_k > sum(delay_costs)


def rrep_admission_check(rrep, d_k: float) -> RrepVerdict:
    """Prefix check at an intermediate hop against the RREP's accumulated C_delay."""
    if deadline_feasible(d_k, [rrep.c_delay]):
        return RrepVerdict.FORWARD
    return RrepVerdict.DISCARD


def stamp_status(rrep, stamp: NodeStatusStamp, cfg: QosConfig, n_hops: int):
    """Append a node's status to an RREP and fold its terms into C and C_delay."""
    part = node_cost(stamp, cfg, n_hops)
    return replace(
        rrep,
        stamps=rrep.stamps + (stamp,),
        cost=rrep.cost + part.total,
        c_delay=rrep.c_delay + part.c_delay,
    )


def _tie_key(route: Sequence[int], score: float) -> Tuple[float, int, Tuple[int, ...]]:
    return (score, len(route), tuple(route))


def select_min_cost(candidates: Sequence[Tuple[Sequence[int], CostBreakdown]]) -> Route:
    """argmin of total C; ties go to fewer hops, then the smallest node-id sequence."""
    if not candidates:
        raise EmptyCandidatesError("no candidate routes to select from")
    route, _ = min(candidates, key=lambda c: _tie_key(c[0], c[1].total))
    return tuple(route)


def select_shortest(routes: Sequence[Sequence[int]]) -> Route:
    """Plain DSR: fewest hops, then the smallest node-id sequence."""
    if not routes:
        raise EmptyCandidatesError("no candidate routes to select from")
    return tuple(min(routes, key=lambda r: (len(r), tuple(r))))


# --- EMRP ---

def emrp_energy_weight(stamp: EmrpStamp) -> float:
    if stamp.e_remain_i <= 0 or stamp.e_remain_next <= 0:
        raise DepletedNodeError(
            f"remaining energy must be > 0, got {stamp.e_remain_i} / {stamp.e_remain_next}"
        )
    # additive (1 + N_retrans) term as printed
    return (stamp.p_tx / stamp.e_remain_i + stamp.p_rx / stamp.e_remain_next) + (1 + stamp.n_retrans)


def emrp_route_weight(emrp_stamps: Sequence[EmrpStamp], alpha: float = 1.0, beta: float = 1.0) -> CostBreakdown:
    w_energy = w_queue = 0.0
    total = 0.0
    for stamp in emrp_stamps:
        e = emrp_energy_weight(stamp)
        q = queue_cost(stamp.n_queue)
        w_energy += e
        w_queue += q
        total += alpha * e + beta * q
    return CostBreakdown(c_energy=w_energy, c_queue=w_queue, total=total)


# --- RT-DSR ---

# slack within this many seconds of zero counts as zero (decimal inputs are not exact in binary)
SLACK_EPSILON = 1e-12


def _slack(remaining: float, p: RtdsrParams) -> float:
    return math.fsum((remaining, -p.t_tl, -p.t_ts))


def rtdsr_admission(p: RtdsrParams) -> Admission:
    if min((p.e_remaining, p.t_tl, p.t_ts) + tuple(p.admitted_deadlines), default=0.0) < 0:
        raise ValueError(f"RT-DSR parameters must be >= 0: {p}")
    if not _slack(p.e_remaining, p) > SLACK_EPSILON:
        return Admission.REJECT
    for e_j in p.admitted_deadlines:
        if not _slack(e_j, p) > SLACK_EPSILON:
            return Admission.REJECT
    return Admission.ADMIT


# --- ALW ---

ALW_PRESETS = {
    "video": (0.5, 0.4, 0.1),
    "ftp": (0.5, 0.3, 0.2),
    "messaging": (0.1, 0.4, 0.5),
    "default": (0.33, 0.33, 0.33),
}


def alw_link_weight(p: AlwParams) -> float:
    check_weight_sum((p.k1, p.k2, p.k3), ALW_WEIGHT_TOLERANCE)
    return p.k1 * p.bandwidth + p.k2 * p.delay + p.k3 * p.node_lifetime


def alw_link_metrics(stamp: NodeStatusStamp, e_initial: float, cfg: QosConfig, window: float) -> Tuple[float, float, float]:
    """(bandwidth, delay, lifetime) of the link at a stamping node, as [0,1] costs."""
    if e_initial <= 0:
        raise ValueError(f"initial energy must be > 0, got {e_initial}")
    bandwidth = 1.0 - 1.0 / (1.0 + stamp.l_queue)
    delay = min(1.0, (stamp.l_queue * cfg.t_local + cfg.t_trans) / window)
    lifetime = 1.0 - min(1.0, max(0.0, stamp.e_remain) / e_initial)
    return bandwidth, delay, lifetime


def alw_route_score(
    stamps: Sequence[NodeStatusStamp],
    initial_energy: Sequence[float],
    k: Tuple[float, float, float],
    cfg: QosConfig,
    window: float,
) -> CostBreakdown:
    total = 0.0
    c_delay = 0.0
    for stamp, e_initial in zip(stamps, initial_energy):
        bandwidth, delay, lifetime = alw_link_metrics(stamp, e_initial, cfg, window)
        total += alw_link_weight(AlwParams(k[0], k[1], k[2], bandwidth, delay, lifetime))
        c_delay += delay
    return CostBreakdown(c_delay=c_delay, total=total)


def score_route(
    selector: str,
    route: Sequence[int],
    stamps: Sequence[NodeStatusStamp],
    cfg: QosConfig,
    emrp_stamps: Sequence[EmrpStamp] = (),
    initial_energy: Sequence[float] = (),
    alw_weights: Optional[Tuple[float, float, float]] = None,
    window: float = 0.5,
) -> CostBreakdown:
    """Cost of one candidate under the given selector ("hops", "cost", "emrp", "alw")."""
    n_hops = len(route) - 1
    if selector == "hops":
        return CostBreakdown(total=float(n_hops))
    if selector == "cost":
        return route_cost(stamps, cfg, n_hops)
    if selector == "emrp":
        return emrp_route_weight(emrp_stamps, cfg.alpha, cfg.beta)
    if selector == "alw":
        if alw_weights is None:
            raise ValueError("ALW selection needs K1..K3 weights")
        return alw_route_score(stamps, initial_energy, alw_weights, cfg, window)
    raise ValueError(f"Unknown selector: {selector}")
