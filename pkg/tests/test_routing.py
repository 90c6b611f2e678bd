import sys
from dataclasses import replace
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))
from scripts.qos_policies import CostBreakdown, route_cost
from scripts.routing import (
    DataPacket,
    Discovery,
    ForwardAction,
    NoRouteError,
    RouteCacheEntry,
    RouteCandidate,
    RoutingSettings,
    Rrep,
    Rreq,
    RreqAction,
    RrepAction,
)
from scripts.traffic_metrics import DropReason, TraceKind
from tests.static_world import LINE, make_router


def cbr(router, src=0, dst=3, generated_at=0.0, deadline=15.0):
    return DataPacket(pkt_id=router.new_packet_id(), src=src, dst=dst, deadline=deadline, generated_at=generated_at)


def traced(tracer, kind, ptype, reason=None):
    return [
        e for e in tracer.events
        if e.kind is kind and e.ptype == ptype and (reason is None or e.reason is reason)
    ]


# --- discovery and delivery ---

@pytest.mark.parametrize("policy", ["dsr", "eddsr", "emrp", "alw-video", "eddsr+rtdsr-admission"])
def test_discovery_then_delivery_along_source_route(policy):
    engine, network, router, tracer = make_router(LINE, policy)
    pkt = cbr(router)
    router.send_data(0, pkt)
    engine.run_until(2.0)
    assert router.selections[0][3] == (0, 1, 2, 3)
    assert [p.pkt_id for p in router.delivered] == [pkt.pkt_id]
    assert pkt.visited == list(pkt.route)
    assert len(traced(tracer, TraceKind.RECV, "CBR")) == 1


def test_rreq_flood_transmits_at_most_once_per_node():
    positions = [(0, 0), (150, 0), (150, 150), (300, 0), (300, 150), (450, 80)]
    engine, network, router, tracer = make_router(positions, "dsr")
    router.send_data(0, cbr(router, dst=5))
    engine.run_until(0.4)
    transmissions = traced(tracer, TraceKind.SEND, "RREQ") + traced(tracer, TraceKind.FWD, "RREQ")
    assert len(transmissions) <= len(positions)
    senders = [e.node for e in transmissions]
    assert len(senders) == len(set(senders))


def test_single_outstanding_discovery_per_destination():
    engine, network, router, tracer = make_router(LINE, "eddsr")
    assert router.originate_discovery(0, 3, 15.0) is Discovery.STARTED
    assert router.originate_discovery(0, 3, 15.0) is Discovery.SUPPRESSED
    engine.run_until(1.0)
    assert router.originate_discovery(0, 3, 15.0) is Discovery.CACHED
    assert len(traced(tracer, TraceKind.SEND, "RREQ")) == 1


def test_cached_route_expires():
    engine, network, router, _ = make_router(LINE, "dsr")
    router.state[0].cache[3] = RouteCacheEntry((0, 1, 2, 3), CostBreakdown(total=3.0), 0.0)
    engine.run_until(4.9)
    assert router.fresh_route(0, 3) is not None
    engine.run_until(5.0)
    assert router.fresh_route(0, 3) is None


def test_buffered_data_dropped_when_no_route():
    positions = LINE[:3] + [(2000.0, 0.0)]
    engine, network, router, tracer = make_router(positions, "dsr", settings=RoutingSettings(send_buffer_timeout=2.0))
    router.send_data(0, cbr(router))
    router.send_data(0, cbr(router))
    engine.run_until(5.0)
    # floods at 0.0 and 1.0, buffer timed out at the 2.5 s retry
    assert [e.time for e in traced(tracer, TraceKind.SEND, "RREQ")] == pytest.approx([0.0, 1.0])
    drops = traced(tracer, TraceKind.DROP, "CBR", DropReason.NO_ROUTE)
    assert [e.time for e in drops] == pytest.approx([2.5, 2.5])
    assert router.state[0].cache == {}
    assert router.state[0].pending == {}


def test_buffered_data_expires_under_deadline_aware_policy():
    positions = LINE[:3] + [(2000.0, 0.0)]
    engine, network, router, tracer = make_router(positions, "eddsr")
    router.send_data(0, cbr(router, deadline=1.2))
    engine.run_until(5.0)
    drops = traced(tracer, TraceKind.DROP, "CBR")
    assert [(e.time, e.reason) for e in drops] == [(pytest.approx(1.5), DropReason.EXPIRED)]
    assert router.state[0].pending == {}


def test_discovery_retries_back_off_up_to_the_cap():
    settings = RoutingSettings(rrep_window=0.5, retry_backoff_max=1.5)
    assert [settings.retry_delay(k) for k in (1, 2, 3, 4)] == pytest.approx([0.5, 1.0, 1.5, 1.5])
    positions = LINE[:3] + [(2000.0, 0.0)]
    engine, network, router, tracer = make_router(positions, "dsr", settings=settings)
    router.send_data(0, cbr(router))
    engine.run_until(7.0)
    floods = [e.time for e in traced(tracer, TraceKind.SEND, "RREQ")]
    assert floods == pytest.approx([0.0, 1.0, 2.5, 4.5, 6.5])
    assert router.state[0].pending[3].attempts == 5


def test_send_buffer_overflow_drops_newest():
    positions = LINE[:3] + [(2000.0, 0.0)]
    engine, network, router, tracer = make_router(positions, "dsr", settings=RoutingSettings(send_buffer_capacity=2))
    packets = [cbr(router) for _ in range(3)]
    for pkt in packets:
        router.send_data(0, pkt)
    assert router.state[0].pending[3].buffer == packets[:2]
    drops = traced(tracer, TraceKind.DROP, "CBR", DropReason.QUEUE_FULL)
    assert [e.pkt_id for e in drops] == [packets[2].pkt_id]


def test_late_discovery_delivers_buffered_packets():
    positions = LINE[:3] + [(2000.0, 0.0)]
    engine, network, router, tracer = make_router(positions, "dsr")
    pkt = cbr(router)
    router.send_data(0, pkt)
    engine.run_until(0.7)
    network.nodes[3].waypoint = replace(network.nodes[3].waypoint, origin=(600.0, 0.0), destination=(600.0, 0.0))
    engine.run_until(3.0)
    assert router.delivered == [pkt]
    assert pkt.route == (0, 1, 2, 3)
    assert router.state[0].pending == {}


def test_buffer_dropped_when_source_dies_during_discovery():
    engine, network, router, tracer = make_router(LINE, "eddsr")
    router.send_data(0, cbr(router))
    network.nodes[0].energy.residual = 0.0
    engine.run_until(1.0)
    assert len(traced(tracer, TraceKind.DROP, "CBR", DropReason.DEAD)) == 1


# --- RREQ handling ---

def test_handle_rreq_rebroadcast_duplicate_and_reply():
    engine, network, router, _ = make_router(LINE, "eddsr")
    rreq = Rreq(pkt_id=100, request_id=(0, 1), origin=0, target=3, accumulated_route=(0,), deadline=15.0, size_bytes=36)

    assert router.handle_rreq(1, rreq) is RreqAction.REBROADCAST
    forwarded = network.nodes[1].queue.pop().packet
    assert forwarded.accumulated_route == (0, 1)
    assert forwarded.size_bytes == 32 + 4 * 2

    assert router.handle_rreq(1, rreq) is RreqAction.DROP

    at_target = Rreq(pkt_id=101, request_id=(0, 1), origin=0, target=3, accumulated_route=(0, 1, 2), deadline=15.0, size_bytes=44)
    assert router.handle_rreq(3, at_target) is RreqAction.REPLY
    queued = network.nodes[3].queue.pop()
    assert isinstance(queued.packet, Rrep)
    assert queued.packet.route == (0, 1, 2, 3)
    assert queued.next_hop == 2


def test_rebroadcast_waits_for_jitter():
    engine, network, router, _ = make_router(LINE, "dsr", settings=RoutingSettings(rreq_jitter=0.01))
    rreq = Rreq(pkt_id=100, request_id=(0, 1), origin=0, target=3, accumulated_route=(0,), deadline=15.0, size_bytes=36)
    assert router.handle_rreq(1, rreq) is RreqAction.REBROADCAST
    assert len(network.nodes[1].queue) == 0
    assert engine.pending() == 1
    delay = engine.peek_time()
    assert 0.0 <= delay <= 0.01


def test_jittered_flood_is_reproducible():
    def run():
        engine, network, router, tracer = make_router(LINE, "eddsr", settings=RoutingSettings(rreq_jitter=0.01))
        router.send_data(0, cbr(router))
        engine.run_until(2.0)
        return [e.to_line() for e in tracer.events], router.delivered

    first, delivered = run()
    second, _ = run()
    assert first == second
    assert len(delivered) == 1


# --- RREP handling ---

def test_plain_dsr_rrep_carries_no_stamps():
    engine, network, router, _ = make_router(LINE, "dsr")
    router.originate_discovery(0, 3, 15.0)
    engine.run_until(0.4)
    candidates = router.state[0].pending[3].candidates
    assert candidates and all(c.stamps == () for c in candidates)


def test_eddsr_rrep_stamped_by_each_intermediate_node():
    engine, network, router, _ = make_router(LINE, "eddsr")
    router.originate_discovery(0, 3, 15.0)
    engine.run_until(0.4)
    (candidate,) = router.state[0].pending[3].candidates
    assert [s.node for s in candidate.stamps] == [2, 1]
    assert all(s.d_i == pytest.approx(200.0) for s in candidate.stamps)
    recomputed = route_cost(candidate.stamps, router.qos, n_hops=3)
    assert candidate.c_delay == pytest.approx(recomputed.c_delay, abs=1e-12)
    assert candidate.cost == pytest.approx(recomputed.total, abs=1e-12)
    assert candidate.cost_breakdown.total == pytest.approx(recomputed.total, abs=1e-12)


def test_emrp_stamps_use_downstream_energy():
    engine, network, router, _ = make_router(LINE, "emrp", energy={3: 80.0})
    router.originate_discovery(0, 3, 15.0)
    engine.run_until(0.4)
    (candidate,) = router.state[0].pending[3].candidates
    first = candidate.emrp_stamps[0]
    assert first.e_remain_next == pytest.approx(network.nodes[3].energy.residual, abs=0.1)
    assert len(candidate.emrp_stamps) == 2


def late_rrep(c_delay, deadline):
    return Rrep(pkt_id=200, request_id=(0, 1), route=(0, 1, 2, 3), deadline=deadline, hop_index=1,
                size_bytes=44, c_delay=c_delay)


def test_deadline_aware_intermediate_discards_expired_rrep():
    engine, network, router, tracer = make_router(LINE, "eddsr")
    assert router.handle_rrep(1, late_rrep(16.0, 15.0)) is RrepAction.DISCARD
    assert len(traced(tracer, TraceKind.DROP, "RREP", DropReason.EXPIRED)) == 1


def test_plain_dsr_forwards_the_same_rrep():
    engine, network, router, _ = make_router(LINE, "dsr")
    assert router.handle_rrep(1, late_rrep(16.0, 15.0)) is RrepAction.FORWARD_TOWARD_SOURCE


@pytest.mark.parametrize("policy", ["dsr+rtdsr-admission", "eddsr+rtdsr-admission"])
def test_rtdsr_admission_rejects_without_slack(policy):
    engine, network, router, _ = make_router(LINE, policy)
    # remaining 1 ms < T_TL (5 ms) + T_TS
    assert router.handle_rrep(1, late_rrep(0.0, 0.001)) is RrepAction.DISCARD
    assert router.handle_rrep(1, late_rrep(0.0, 1.0)) is RrepAction.FORWARD_TOWARD_SOURCE


def test_rrep_with_broken_reverse_hop_is_discarded():
    engine, network, router, tracer = make_router(LINE, "eddsr")
    network.nodes[0].energy.residual = 0.0
    assert router.handle_rrep(1, late_rrep(0.0, 15.0)) is RrepAction.DISCARD
    assert len(traced(tracer, TraceKind.DROP, "RREP", DropReason.BROKEN_LINK)) == 1


# --- selection ---

def candidate(route, total):
    return RouteCandidate(route=route, stamps=(), emrp_stamps=(), cost_breakdown=CostBreakdown(total=total))


def test_dsr_selects_fewest_hops():
    engine, network, router, _ = make_router(LINE, "dsr")
    entry = router.select_route([candidate((0, 4, 5, 6, 7, 9), 5.0), candidate((0, 1, 2, 9), 3.0)])
    assert entry.route == (0, 1, 2, 9)


def test_cost_policy_selects_minimum_cost():
    engine, network, router, _ = make_router(LINE, "eddsr")
    candidates = [candidate((0, 1, 9), 2.05), candidate((0, 2, 3, 9), 1.5)]
    first = router.select_route(candidates)
    assert first.route == (0, 2, 3, 9)
    assert router.select_route(candidates).route == first.route
    assert router.select_route([candidate((0, 7, 9), 4.0)]).route == (0, 7, 9)


def test_select_route_without_candidates():
    engine, network, router, _ = make_router(LINE, "eddsr")
    with pytest.raises(NoRouteError):
        router.select_route([])


# --- forwarding ---

def test_expired_packet_dropped_under_eddsr_only():
    for policy, expected in (("eddsr", ForwardAction.DROP_EXPIRED), ("dsr", ForwardAction.NEXT_HOP)):
        engine, network, router, tracer = make_router(LINE, policy)
        engine.run_until(15.1)
        pkt = cbr(router, generated_at=0.0)
        pkt.route = (0, 1, 2, 3)
        assert router.forward_data(0, pkt) is expected


def test_dead_next_hop_at_source_rebuffers_packet():
    engine, network, router, tracer = make_router(LINE, "eddsr")
    router.state[0].cache[3] = RouteCacheEntry((0, 1, 2, 3), CostBreakdown(), 0.0)
    network.nodes[1].energy.residual = 0.0
    pkt = cbr(router)
    pkt.route = (0, 1, 2, 3)
    assert router.forward_data(0, pkt) is ForwardAction.BUFFERED
    assert router.state[0].cache == {}
    assert router.state[0].pending[3].buffer == [pkt]
    assert traced(tracer, TraceKind.SEND, "RERR") == []
    assert traced(tracer, TraceKind.DROP, "CBR") == []
    assert len(traced(tracer, TraceKind.SEND, "RREQ")) == 1


def test_link_lost_while_queued_at_source_rebuffers_packet():
    engine, network, router, tracer = make_router(LINE, "dsr")
    router.state[0].cache[3] = RouteCacheEntry((0, 1, 2, 3), CostBreakdown(), 0.0)
    pkt = cbr(router)
    pkt.route = (0, 1, 2, 3)
    assert router.forward_data(0, pkt) is ForwardAction.NEXT_HOP
    network.nodes[1].energy.residual = 0.0
    engine.run_until(0.1)
    assert router.state[0].pending[3].buffer == [pkt]
    assert traced(tracer, TraceKind.DROP, "CBR") == []


def test_rebuffered_packet_takes_a_new_route():
    positions = LINE + [(200.0, 100.0)]
    engine, network, router, tracer = make_router(positions, "dsr")
    router.state[0].cache[3] = RouteCacheEntry((0, 1, 2, 3), CostBreakdown(), 0.0)
    network.nodes[1].energy.residual = 0.0
    pkt = cbr(router)
    pkt.route = (0, 1, 2, 3)
    router.forward_data(0, pkt)
    engine.run_until(2.0)
    assert router.delivered == [pkt]
    assert pkt.route == (0, 4, 2, 3)


def test_broken_link_downstream_sends_route_error_to_source():
    engine, network, router, tracer = make_router(LINE, "eddsr")
    router.state[0].cache[3] = RouteCacheEntry((0, 1, 2, 3), CostBreakdown(), 0.0)
    network.nodes[2].energy.residual = 0.0
    pkt = cbr(router)
    pkt.route, pkt.hop_index = (0, 1, 2, 3), 1
    assert router.forward_data(1, pkt) is ForwardAction.DROP_BROKEN
    engine.run_until(1.0)
    assert [e.node for e in traced(tracer, TraceKind.RECV, "RERR")] == [0]
    assert router.state[0].cache == {}


def test_destination_delivers():
    engine, network, router, tracer = make_router(LINE, "eddsr")
    pkt = cbr(router)
    pkt.route, pkt.hop_index = (0, 1, 2, 3), 3
    assert router.forward_data(3, pkt) is ForwardAction.DELIVER
    assert router.delivered == [pkt]
