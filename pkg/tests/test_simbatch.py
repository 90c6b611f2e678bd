import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))
from scripts.simbatch import (
    MEAN_SEED,
    assemble_rows,
    build_jobs,
    compare_policies,
    comparison_table,
    failed_points,
    parse_sweep,
    run_batch,
)
from scripts.traffic_metrics import METRICS_CSV_COLUMNS
from tests.tiny_scenario import tiny_scenario


def quick():
    return tiny_scenario(duration=10)


def test_parse_sweep_builds_cartesian_grid():
    grid = parse_sweep(["rate=5,10", "nodes=10,20"])
    assert grid == [
        {"rate": "5", "nodes": "10"},
        {"rate": "5", "nodes": "20"},
        {"rate": "10", "nodes": "10"},
        {"rate": "10", "nodes": "20"},
    ]
    assert parse_sweep(None) == [{}]


@pytest.mark.parametrize("sweep", ["rate", "=5,10", "rate="])
def test_parse_sweep_rejects_malformed_axes(sweep):
    with pytest.raises(ValueError):
        parse_sweep([sweep])


def test_build_jobs_pairs_seeds_across_policies():
    jobs = build_jobs(quick(), ["dsr", "eddsr"], [{"rate": "5"}], reps=3)
    assert len(jobs) == 6
    seeds = {}
    for scenario, seed, meta in jobs:
        seeds.setdefault(scenario.policy.name, []).append(seed)
        assert scenario.rate_pps == 5.0
    assert seeds == {"dsr": [7, 8, 9], "eddsr": [7, 8, 9]}


def test_build_jobs_needs_points_and_reps():
    with pytest.raises(ValueError):
        build_jobs(quick(), ["eddsr"], [], reps=1)
    with pytest.raises(ValueError):
        build_jobs(quick(), ["eddsr"], [{}], reps=0)


def test_rate_sweep_row_count():
    df, records = run_batch(quick(), parse_sweep(["rate=5,10,20"]), reps=2)
    assert list(df.columns) == METRICS_CSV_COLUMNS
    assert len(records) == 6
    assert len(df) == 3 * (2 + 1)
    assert list(df["seed"]) == [7, 8, MEAN_SEED] * 3
    assert list(df["rate_pps"].drop_duplicates()) == [5.0, 10.0, 20.0]


def test_mean_row_is_mean_of_replications():
    df, _ = run_batch(quick(), [{}], reps=2)
    reps, mean = df.iloc[:2], df.iloc[2]
    assert mean["seed"] == MEAN_SEED
    assert mean["delivery_ratio"] == pytest.approx(reps["delivery_ratio"].astype(float).mean())
    assert mean["lifetime_smh_s"] == pytest.approx(reps["lifetime_smh_s"].astype(float).mean())


def test_single_replication_mean_equals_the_run():
    df, _ = run_batch(quick(), [{}], reps=1)
    run, mean = df.iloc[0], df.iloc[1]
    for column in ("delivery_ratio", "in_time_ratio", "lifetime_smh_s"):
        assert mean[column] == pytest.approx(run[column])
    assert bool(mean["lifetime_censored"]) == bool(run["lifetime_censored"])


def test_node_sweep_rescales_population():
    df, _ = run_batch(quick(), parse_sweep(["nodes=4,6"]), reps=1)
    assert list(df["nodes"]) == [4, 4, 6, 6]


def test_compare_policies_side_by_side():
    df, wide, records = compare_policies(quick(), ["dsr", "eddsr"], [{}], reps=1)
    assert list(df["policy"]) == ["dsr", "dsr", "eddsr", "eddsr"]
    assert len(wide) == 1
    for column in ("delivery_ratio[dsr]", "delivery_ratio[eddsr]", "lifetime_gain_pct[eddsr]"):
        assert column in wide.columns
    assert "lifetime_gain_pct[dsr]" not in wide.columns


def test_compare_needs_two_policies():
    with pytest.raises(ValueError):
        compare_policies(quick(), ["eddsr"], [{}], reps=1)


def fake_record(seed, status="ok", policy="eddsr", delivery=0.5, lifetime=40.0):
    record = {
        "scenario": "tiny", "policy": policy, "seed": seed, "rate_pps": 5.0, "nodes": 10, "deadline_s": 15.0,
        "point": {"index": 0, "policy_index": 0, "values": {"rate": "5"}},
        "status": status, "error": None if status == "ok" else "RuntimeError: boom",
    }
    if status == "ok":
        record["report"] = {
            "delivery_ratio": delivery, "in_time_ratio": delivery, "mean_e2e_delay": None,
            "lifetime_smh": lifetime, "lifetime_censored": False, "energy_per_bit": None,
        }
    return record


def test_failed_replication_becomes_failed_row():
    records = [fake_record(2, delivery=0.75), fake_record(1, status="error"), fake_record(3, delivery=0.25)]
    df = assemble_rows(records)
    assert list(df["seed"]) == [1, 2, 3, MEAN_SEED]
    assert df.iloc[0]["delivery_ratio"] == "failed"
    mean = df.iloc[3]
    assert mean["delivery_ratio"] == pytest.approx(0.5)
    # undefined in every replication stays undefined in the mean
    assert mean["mean_delay_s"] is None
    assert failed_points(records) == [{"policy": "eddsr", "rate": "5"}]


def test_all_failed_point_has_failed_mean():
    df = assemble_rows([fake_record(1, status="error")])
    assert list(df["delivery_ratio"]) == ["failed", "failed"]


def test_comparison_lifetime_gain():
    records = [fake_record(1, policy="dsr", lifetime=40.0)]
    eddsr = fake_record(1, policy="eddsr", lifetime=50.0)
    eddsr["point"] = {"index": 0, "policy_index": 1, "values": {"rate": "5"}}
    wide = comparison_table(assemble_rows(records + [eddsr]))
    assert wide.loc[0, "lifetime_gain_pct[eddsr]"] == pytest.approx(25.0)
