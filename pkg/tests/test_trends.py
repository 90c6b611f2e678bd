"""
Policy trends on the desk scenario (20 nodes, 100 s, 5 seeds per point).

Minutes of simulation; enable with SIM_RUN_SLOW=1 (SIM_TEST_CONCURRENCY sets the worker count).
"""
import os
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))
from scripts.scenario import parse_scenario
from scripts.simbatch import compare_policies, parse_sweep
from scripts.simulation import run_scenario
from scripts.traffic_metrics import DropReason, TraceKind

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(os.getenv("SIM_RUN_SLOW") != "1", reason="set SIM_RUN_SLOW=1 to run trend sweeps"),
]

DESK = Path(__file__).parent.parent / "scenarios" / "desk-20n-100s.scn"
CONCURRENCY = int(os.getenv("SIM_TEST_CONCURRENCY", "4"))


@pytest.fixture(scope="module")
def desk():
    return parse_scenario(DESK, env={})


@pytest.fixture(scope="module")
def rate_run(desk):
    _, wide, records = compare_policies(desk, ["dsr", "eddsr"], parse_sweep(["rate=5,10,15,20"]), concurrency=CONCURRENCY)
    assert all(r["status"] == "ok" for r in records)
    return wide.set_index("rate_pps"), records


@pytest.fixture(scope="module")
def rate_sweep(rate_run):
    return rate_run[0]


def high_load(wide):
    return wide[wide.index >= 10]


def test_in_time_delivery(rate_sweep):
    loaded = high_load(rate_sweep)
    assert (loaded["in_time_ratio[eddsr]"] >= loaded["in_time_ratio[dsr]"]).all()
    assert rate_sweep.loc[10.0, "in_time_ratio[eddsr]"] >= 0.5


def test_end_to_end_delay(rate_sweep):
    loaded = high_load(rate_sweep)
    assert (loaded["mean_delay_s[eddsr]"] <= loaded["mean_delay_s[dsr]"]).all()
    low = rate_sweep.loc[5.0]
    assert abs(low["mean_delay_s[eddsr]"] - low["mean_delay_s[dsr]"]) < 0.5 * low["mean_delay_s[dsr]"]


def test_smh_lifetime(rate_run, desk):
    wide, records = rate_run
    loaded = high_load(wide)
    assert (loaded["lifetime_smh_s[eddsr]"] >= loaded["lifetime_smh_s[dsr]"]).all()
    assert (loaded["lifetime_smh_s[dsr]"] < desk.duration).any()
    depleted = [r for r in records if r["policy"] == "dsr" and not r["report"]["lifetime_censored"]]
    assert depleted


def test_energy_per_bit(rate_sweep):
    loaded = high_load(rate_sweep)
    assert (loaded["energy_per_bit_j[eddsr]"] <= loaded["energy_per_bit_j[dsr]"]).all()


def test_smh_lifetime_over_node_counts(desk):
    _, wide, records = compare_policies(desk, ["dsr", "eddsr"], parse_sweep(["nodes=10,20,30"]), concurrency=CONCURRENCY)
    assert (wide["lifetime_smh_s[eddsr]"] >= wide["lifetime_smh_s[dsr]"]).all()
    assert (wide["lifetime_smh_s[dsr]"] < desk.duration).any()
    assert any(not r["report"]["lifetime_censored"] for r in records if r["status"] == "ok")


def test_deadline_invariant_on_every_seed(desk):
    expired_total = 0
    for r in range(desk.replications):
        result = run_scenario(desk, desk.base_seed + r)
        sent = {e.pkt_id: e.time for e in result.events if e.ptype == "CBR" and e.kind is TraceKind.SEND}
        for e in result.events:
            if e.ptype != "CBR" or e.kind not in (TraceKind.FWD, TraceKind.RECV):
                continue
            assert e.time - sent[e.pkt_id] <= desk.deadline_s
        expired = [e for e in result.events if e.reason is DropReason.EXPIRED and e.ptype == "CBR"]
        assert all(e.time - sent[e.pkt_id] > desk.deadline_s for e in expired)
        assert result.report.in_time_ratio == result.report.delivery_ratio
        expired_total += len(expired)
    # at least one packet must have reached the deadline check
    assert expired_total > 0
