#!/usr/bin/env python3
"""
Module: simbatch
Purpose: Parameter sweeps with replications, and paired policy comparisons.

Key features:
    - Grid = cartesian product of every --sweep (rate=..., nodes=..., deadline=..., any scenario key)
    - Replication r of every grid point runs with seed base_seed + r, for every policy,
      so policies are compared on identical mobility and traffic
    - Concurrency control (process pool behind an asyncio semaphore) with a tqdm progress bar
    - A failed replication becomes a "failed" row; the batch continues and exits nonzero
    - Per-batch output/run_{timestamp}_{pid}/ with config.json, metrics.csv, comparison.csv

CLI Usage (examples):
    python scripts/simbatch.py scenarios/desk-20n-100s.scn \
        --sweep rate=5,10,15,20 --reps 5 --policies dsr,eddsr --concurrency 4

    # energy, delay and default weighting over a node sweep
    python scripts/simbatch.py scenarios/paper-50n.scn --sweep nodes=10,20,30,50,70,100 \
        --policies eddsr-energy,eddsr-delay,eddsr-default --csv output/nodes.csv
"""
import argparse
import asyncio
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from dotenv import load_dotenv
from tqdm import tqdm

try:
    from scripts.scenario import Scenario, parse_scenario
    from scripts.simulation import run_single
    from scripts.traffic_metrics import METRICS_CSV_COLUMNS, metrics_row
except ImportError:
    # Handle case where script is run from scripts directory
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from scripts.scenario import Scenario, parse_scenario
    from scripts.simulation import run_single
    from scripts.traffic_metrics import METRICS_CSV_COLUMNS, metrics_row

load_dotenv()

logging.basicConfig(
    level=os.getenv("SIM_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(levelname)s - %(message)s',
)
logger = logging.getLogger(__name__)

Point = Dict[str, str]
Job = Tuple[Scenario, int, Dict[str, Any]]

MEAN_SEED = "mean"
NUMERIC_METRICS = ["delivery_ratio", "in_time_ratio", "mean_e2e_delay", "lifetime_smh", "energy_per_bit"]
COMPARISON_METRICS = ["delivery_ratio", "in_time_ratio", "mean_delay_s", "lifetime_smh_s", "energy_per_bit_j"]


def parse_sweep(sweeps: Optional[Sequence[str]]) -> List[Point]:
    """["rate=5,10", "nodes=10,20"] -> cartesian grid of override dicts ([{}] if no sweep)."""
    axes = []
    for sweep in sweeps or []:
        key, sep, raw = sweep.partition("=")
        values = [v.strip() for v in raw.split(",") if v.strip()]
        if not sep or not key.strip() or not values:
            raise ValueError(f"Invalid sweep '{sweep}'. Expected key=v1,v2,...")
        axes.append([(key.strip(), v) for v in values])
    return [dict(combo) for combo in itertools.product(*axes)]


def build_jobs(scenario: Scenario, policies: Sequence[str], grid: Sequence[Point], reps: int) -> List[Job]:
    if not grid:
        raise ValueError("sweep grid is empty")
    if reps < 1:
        raise ValueError(f"replications must be >= 1, got {reps}")
    jobs = []
    for point_index, point in enumerate(grid):
        base = scenario.with_overrides(**point)
        for policy_index, policy in enumerate(policies):
            s = base.with_policy(policy)
            for r in range(reps):
                meta = {"index": point_index, "policy_index": policy_index, "values": dict(point)}
                jobs.append((s, base.base_seed + r, meta))
    return jobs


async def run_jobs(jobs: Sequence[Job], concurrency: int = 1) -> List[Dict[str, Any]]:
    loop = asyncio.get_running_loop()
    semaphore = asyncio.Semaphore(max(1, concurrency))
    executor = ProcessPoolExecutor(max_workers=concurrency) if concurrency > 1 else None
    pbar = tqdm(total=len(jobs), desc="Simulating")

    async def one(job: Job) -> Dict[str, Any]:
        async with semaphore:
            record = await loop.run_in_executor(executor, run_single, *job)
        if record["status"] != "ok":
            logger.warning(
                f"Replication failed: policy={record['policy']} seed={record['seed']} "
                f"point={record['point']['values']}: {record['error']}"
            )
        pbar.update(1)
        return record

    try:
        return await asyncio.gather(*(one(job) for job in jobs))
    finally:
        pbar.close()
        if executor is not None:
            executor.shutdown()


def _mean_report(records: Sequence[Dict[str, Any]]) -> Optional[dict]:
    reports = [r["report"] for r in records if r["status"] == "ok"]
    if not reports:
        return None
    mean = {}
    for key in NUMERIC_METRICS:
        values = pd.Series([rep[key] for rep in reports], dtype=float)
        mean[key] = None if values.isna().all() else float(values.mean())
    mean["lifetime_censored"] = all(rep["lifetime_censored"] for rep in reports)
    return mean


def assemble_rows(records: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Per-replication rows plus one mean row per (grid point, policy), sorted deterministically."""
    groups: Dict[Tuple[int, int], List[Dict[str, Any]]] = {}
    for rec in records:
        key = (rec["point"]["index"], rec["point"]["policy_index"])
        groups.setdefault(key, []).append(rec)

    rows = []
    for key in sorted(groups):
        recs = sorted(groups[key], key=lambda r: r["seed"])
        head = recs[0]
        common = (head["scenario"], head["policy"])
        shape = (head["rate_pps"], head["nodes"], head["deadline_s"])
        for r in recs:
            report = r["report"] if r["status"] == "ok" else None
            rows.append(metrics_row(*common, r["seed"], *shape, report))
        rows.append(metrics_row(*common, MEAN_SEED, *shape, _mean_report(recs)))
    return pd.DataFrame(rows, columns=METRICS_CSV_COLUMNS)


def failed_points(records: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    seen = {}
    for rec in records:
        if rec["status"] != "ok":
            seen.setdefault((rec["point"]["index"], rec["policy"]), {"policy": rec["policy"], **rec["point"]["values"]})
    return list(seen.values())


def run_batch(scenario: Scenario, grid: Sequence[Point], reps: Optional[int] = None,
              concurrency: int = 1, policies: Optional[Sequence[str]] = None) -> Tuple[pd.DataFrame, List[Dict[str, Any]]]:
    """Run every grid point x replication; returns the metrics table and the raw records."""
    reps = scenario.replications if reps is None else reps
    policies = list(policies) if policies else [scenario.policy.name]
    jobs = build_jobs(scenario, policies, grid, reps)
    logger.info(f"Prepared {len(jobs)} runs: {len(grid)} point(s) x {len(policies)} policy(ies) x {reps} rep(s)")
    records = asyncio.run(run_jobs(jobs, concurrency))
    return assemble_rows(records), records


def comparison_table(df: pd.DataFrame) -> pd.DataFrame:
    """Side-by-side per-point means, one column per (metric, policy), plus SMH lifetime gain vs the first policy."""
    means = df[df["seed"] == MEAN_SEED].copy()
    policy_names = list(dict.fromkeys(means["policy"]))
    for metric in COMPARISON_METRICS:
        means[metric] = pd.to_numeric(means[metric], errors="coerce")
    keys = ["scenario", "rate_pps", "nodes", "deadline_s"]
    wide = means.pivot(index=keys, columns="policy", values=COMPARISON_METRICS)
    wide.columns = [f"{metric}[{policy}]" for metric, policy in wide.columns]
    ordered = [f"{m}[{p}]" for m in COMPARISON_METRICS for p in policy_names]
    wide = wide[ordered]
    baseline = wide[f"lifetime_smh_s[{policy_names[0]}]"]
    for policy in policy_names[1:]:
        wide[f"lifetime_gain_pct[{policy}]"] = (wide[f"lifetime_smh_s[{policy}]"] - baseline) / baseline * 100.0
    return wide.reset_index()


def compare_policies(scenario: Scenario, policies: Sequence[str], grid: Sequence[Point],
                     reps: Optional[int] = None, concurrency: int = 1) -> Tuple[pd.DataFrame, pd.DataFrame, List[Dict[str, Any]]]:
    if len(policies) < 2:
        raise ValueError(f"need at least 2 policies to compare, got {list(policies)}")
    df, records = run_batch(scenario, grid, reps, concurrency, policies)
    return df, comparison_table(df), records


def main():
    parser = argparse.ArgumentParser(description="Run MANET routing simulation sweeps and policy comparisons.")
    parser.add_argument("scenario", type=str, help="Path to a .scn scenario file.")
    parser.add_argument("--sweep", action="append", default=None, help="Sweep axis, e.g. rate=5,10,20 (repeatable).")
    parser.add_argument("--reps", "-r", type=int, default=None, help="Replications per point. Default: scenario value.")
    parser.add_argument("--policies", "-p", type=str, default=None, help="Comma-separated policies. Default: scenario policy.")
    parser.add_argument("--seed", "-s", type=int, default=None, help="Override base_seed.")
    parser.add_argument("--concurrency", "-c", type=int, default=1, help="Number of replications run in parallel.")
    parser.add_argument("--output_dir", "-o", type=str, default="output", help="Parent directory for run_* folders.")
    parser.add_argument("--csv", type=str, default=None, help="Metrics CSV path. Default: <run dir>/metrics.csv")
    parser.add_argument("--comparison_csv", type=str, default=None, help="Comparison CSV path. Default: <run dir>/comparison.csv")
    args = parser.parse_args()

    try:
        scenario = parse_scenario(args.scenario)
        if args.seed is not None:
            scenario = scenario.with_overrides(base_seed=args.seed)
        grid = parse_sweep(args.sweep)
        policies = [p.strip() for p in args.policies.split(",") if p.strip()] if args.policies else [scenario.policy.name]
        # fail fast on bad policy names or sweep values
        build_jobs(scenario, policies, grid, 1)
    except FileNotFoundError as e:
        logger.error(str(e))
        sys.exit(1)
    except ValueError as e:
        logger.error(f"Invalid batch setup: {e}")
        sys.exit(1)

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    run_id = f"run_{timestamp}_{os.getpid()}"
    run_dir = Path(args.output_dir) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    reps = scenario.replications if args.reps is None else args.reps
    config = {
        "run_id": run_id,
        "timestamp": timestamp,
        "scenario_path": args.scenario,
        "sweep": args.sweep or [],
        "reps": reps,
        "policies": policies,
        "concurrency": args.concurrency,
        "scenario": scenario.to_config(),
    }
    with (run_dir / "config.json").open("w", encoding="utf-8") as f:
        json.dump(config, f, indent=4)

    if len(policies) >= 2:
        df, wide, records = compare_policies(scenario, policies, grid, reps, args.concurrency)
        comparison_path = Path(args.comparison_csv) if args.comparison_csv else run_dir / "comparison.csv"
        comparison_path.parent.mkdir(parents=True, exist_ok=True)
        wide.to_csv(comparison_path, index=False)
        logger.info(f"Comparison written to {comparison_path}")
    else:
        df, records = run_batch(scenario, grid, reps, args.concurrency, policies)

    csv_path = Path(args.csv) if args.csv else run_dir / "metrics.csv"
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(csv_path, index=False)
    logger.info(f"Metrics written to {csv_path} ({len(df)} rows)")
    print(df[df["seed"] == MEAN_SEED].to_string(index=False))

    failed = failed_points(records)
    if failed:
        logger.error(f"{len(failed)} grid point(s) had failed replications: {failed}")
        sys.exit(1)


if __name__ == "__main__":
    main()
