"""Run every stage for one scenario and print the congestion table.

    python scripts/run_pipeline.py --config ci --demand set2 --out results/set2
"""

import argparse
import json
import logging
from dataclasses import replace

from aam_congestion.harness import load_scenario, run_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", default="ci", help="scenario JSON or bundled name")
    ap.add_argument("--demand", help="override the demand preset (set1, set2 or a JSON path)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="results")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    cfg = load_scenario(args.config)
    if args.demand:
        cfg = replace(cfg, demand=args.demand)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    report = run_pipeline(cfg, args.out)["report"]
    for d in report["test_days"]["days"]:
        totals = " ".join(f"{s}={v}" for s, v in d["totals"].items())
        reds = " ".join(f"{s}={v:.1f}%" for s, v in d["reductions"].items())
        print(f"test day {d['day']}: {totals}  reduction {reds}")
    print(json.dumps({"out": args.out, "frames_managed": sum(
        h["managed_congestion"] < h["zero_toll_congestion"] for h in report["historical"])}))


if __name__ == "__main__":
    main()
