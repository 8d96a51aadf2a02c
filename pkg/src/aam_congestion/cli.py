"""Command-line driver for the experiment workflow.

Each verb reads the artifacts of the previous one from ``--out`` and writes
its own there, so the stages can be rerun independently:

    simulate-historical -> historical.json
    aggregate           -> strategies.json
    run-tests           -> tests.json
    popup-study         -> popups.json
    report              -> report.json, tables.csv, boxplot_data.csv
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .aggregation import StrategyBook
from .harness import (
    STRATEGIES,
    HistoricalRun,
    ScenarioConfig,
    build_report,
    build_strategies,
    load_scenario,
    run_historical,
    run_popup_study,
    run_test_days,
    write_report,
)

log = logging.getLogger("aam_congestion")


def _dump(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _read(path: Path, hint: str):
    if not path.exists():
        raise SystemExit(f"{path} not found; run `{hint}` first")
    with open(path) as fh:
        return json.load(fh)


def _config(args) -> ScenarioConfig:
    out = Path(args.out)
    saved = out / "scenario.json"
    if args.config is None and saved.exists():
        cfg = ScenarioConfig.from_dict(_read(saved, "simulate-historical"))
    else:
        cfg = load_scenario(args.config or "ci")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    return cfg


def _strategies(choice: str | None, default) -> list[str]:
    if choice is None:
        return list(default)
    if choice == "all":
        return list(STRATEGIES)
    # reductions are always reported against the unmanaged row
    return ["none"] if choice == "none" else ["none", choice]


def _books(out: Path) -> dict:
    doc = _read(out / "strategies.json", "aggregate")
    return {k: StrategyBook.from_dict(v) for k, v in doc.items()}


def cmd_simulate_historical(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hist = run_historical(cfg)
    _dump(cfg.to_dict(), out / "scenario.json")
    _dump(hist.to_dict(), out / "historical.json")
    n = sum(len(d) for d in hist.outcomes)
    print(f"{n} frame decisions written to {out / 'historical.json'}")


def cmd_aggregate(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    hist = HistoricalRun.from_dict(_read(out / "historical.json", "simulate-historical"))
    books = build_strategies(cfg, hist)
    keep = _strategies(args.strategy, STRATEGIES)
    books = {k: b for k, b in books.items() if k.split("/")[0] in keep}
    _dump({k: b.to_dict() for k, b in books.items()}, out / "strategies.json")
    print(f"strategy books {sorted(books)} written to {out / 'strategies.json'}")


def cmd_run_tests(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    res = run_test_days(cfg, _books(out), _strategies(args.strategy, cfg.strategies))
    _dump(res, out / "tests.json")
    for d in res["days"]:
        parts = [f"{s}={t}" + (f" ({d['reductions'][s]:.1f}%)" if s in d["reductions"] else "")
                 for s, t in d["totals"].items()]
        print(f"test day {d['day']}: " + ", ".join(parts))


def cmd_popup_study(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    res = run_popup_study(cfg, _books(out), _strategies(args.strategy, cfg.popup_strategies), args.popup_rate,
                          args.reps)
    _dump(res, out / "popups.json")
    for d in res["days"]:
        parts = [f"{s} median {blk['day_totals']['median']}" for s, blk in d["strategies"].items()]
        print(f"test day {d['day']}: " + ", ".join(parts))


def cmd_report(args) -> None:
    cfg = _config(args)
    out = Path(args.out)
    hist = HistoricalRun.from_dict(_read(out / "historical.json", "simulate-historical"))
    tests = _read(out / "tests.json", "run-tests") if (out / "tests.json").exists() else None
    pops = _read(out / "popups.json", "popup-study") if (out / "popups.json").exists() else None
    write_report(build_report(cfg, hist, tests, pops), out)
    print(f"report written to {out}")


COMMANDS = {
    "simulate-historical": cmd_simulate_historical,
    "aggregate": cmd_aggregate,
    "run-tests": cmd_run_tests,
    "popup-study": cmd_popup_study,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aam-congestion", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="scenario JSON file or bundled name (ci, default)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--out", default="results", help="artifact directory")
        p.add_argument("--strategy", choices=("none", "type1", "type2", "all"))
        p.add_argument("--popup-rate", type=float, default=None)
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--jobs", type=int, default=None)
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
