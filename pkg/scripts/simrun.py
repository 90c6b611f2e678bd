#!/usr/bin/env python3
"""
Module: simrun
Purpose: Run one replication of a scenario, write the trace (plus its energy ledger)
         and print the metrics report.

CLI Usage (examples):
    # desk-scale run, seed 7, keep the trace
    python scripts/simrun.py scenarios/desk-20n-100s.scn --seed 7 --trace output/desk.trc

    # same scenario under plain DSR, append the metrics row to a CSV
    python scripts/simrun.py scenarios/desk-20n-100s.scn --policy dsr --csv output/single.csv

Env:
    SIM_BASE_SEED   overrides base_seed from the scenario file (.env is honoured)
    SIM_LOG_LEVEL   logging level (default INFO)
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

try:
    from scripts.scenario import parse_scenario
    from scripts.simulation import run_scenario
    from scripts.traffic_metrics import METRICS_CSV_COLUMNS, metrics_row
except ImportError:
    # Handle case where script is run from scripts directory
    sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    from scripts.scenario import parse_scenario
    from scripts.simulation import run_scenario
    from scripts.traffic_metrics import METRICS_CSV_COLUMNS, metrics_row

load_dotenv()

logging.basicConfig(
    level=os.getenv("SIM_LOG_LEVEL", "INFO").upper(),
    format='%(asctime)s - %(levelname)s - %(message)s',
)
logger = logging.getLogger(__name__)


def append_csv(path: Path, row: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame([row], columns=METRICS_CSV_COLUMNS)
    df.to_csv(path, mode="a", header=not path.exists(), index=False)


def main():
    parser = argparse.ArgumentParser(description="Run one MANET routing simulation replication.")
    parser.add_argument("scenario", type=str, help="Path to a .scn scenario file.")
    parser.add_argument("--seed", "-s", type=int, default=None, help="Replication seed. Default: base_seed of the scenario.")
    parser.add_argument("--policy", "-p", type=str, default=None, help="Override the scenario's routing policy (e.g. dsr, eddsr-energy, alw-video).")
    parser.add_argument("--trace", "-t", type=str, default=None, help="Write the event trace here (energy ledger goes next to it).")
    parser.add_argument("--csv", type=str, default=None, help="Append the metrics row to this CSV.")
    args = parser.parse_args()

    try:
        scenario = parse_scenario(args.scenario)
        if args.policy:
            scenario = scenario.with_policy(args.policy)
    except FileNotFoundError as e:
        logger.error(str(e))
        sys.exit(1)
    except ValueError as e:
        logger.error(f"Invalid scenario {args.scenario}: {e}")
        sys.exit(1)

    seed = scenario.base_seed if args.seed is None else args.seed
    try:
        result = run_scenario(scenario, seed, args.trace)
    except ValueError as e:
        logger.error(f"Run failed: {e}")
        sys.exit(1)

    if result.trace_path:
        logger.info(f"Trace written to {result.trace_path} (ledger {result.ledger_path})")
    if args.csv:
        row = metrics_row(
            scenario.name, scenario.policy.name, seed, scenario.rate_pps,
            scenario.n_nodes, scenario.deadline_s, result.report.to_dict(),
        )
        append_csv(Path(args.csv), row)
        logger.info(f"Metrics row appended to {args.csv}")

    print(json.dumps({"scenario": scenario.name, "policy": scenario.policy.name, "seed": seed,
                      **result.report.to_dict()}, indent=2))


if __name__ == "__main__":
    main()
