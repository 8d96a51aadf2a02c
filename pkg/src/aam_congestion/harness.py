"""Experiment orchestration: historical days, aggregation, test days, pop-ups.

Every random draw comes from a seed derived from the scenario seed and the
role of the draw (historical day, test day, surrogate, candidates, pop-up
replication), so reruns with the same configuration reproduce every number.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path as FsPath
from typing import Callable, Mapping, Sequence

import numpy as np

from .aggregation import StrategyBook, aggregate_naive, aggregate_weighted, zero_strategy
from .demand import DaySchedule, DemandParams, load_demand_preset, normalize_demand, sample_popups, sample_schedule
from .hlp import HlpDecision, HlpSearchConfig, occupancy, solve_hlp
from .llp import LlpConfig, LlpInfeasible, TollSpace, TollVector, solve_llp
from .milp import SolveLimits
from .network import NetworkModel, build_synthetic_network, load_network
from .surrogate import (
    SurrogateConfig,
    SurrogateDataset,
    TrainedSurrogate,
    approx_ratio,
    generate_dataset,
    restricted_toll_space,
    train,
)

log = logging.getLogger(__name__)

STRATEGIES = ("none", "type1", "type2")

# seed stream roles
HISTORICAL, TEST, SURROGATE, CANDIDATES, POPUP = range(5)


def stream_seed(*keys: int) -> int:
    """Independent 32-bit seed for a tuple of non-negative integer keys."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "desk"
    network: str = "default"  # bundled name or JSON path
    demand: str = "set1"  # bundled preset name or JSON path
    historical_days: int = 3
    test_days: int = 3
    seed: int = 0
    strategies: tuple[str, ...] = STRATEGIES
    # low-level planner
    max_delay: float = 900.0
    backend: str = "highs"
    # toll space
    n_paths: int = 5
    n_vertiports: int = 3
    toll_bins: int = 1
    toll_max: float = 100.0
    # surrogate
    hidden: tuple[int, ...] = (256, 128, 64)
    lr: float = 0.01
    epochs: int = 500
    train_size: int = 1000
    batch_size: int = 32
    surrogate_scope: str = "frame"  # "frame" or "scenario"
    # high-level planner
    n_candidates: int = 64
    delta_vm: float = 0.02
    max_retries: int = 3
    encoding: str = "interval"
    follower_node_limit: int = 20000
    # aggregation
    eps: float = 1e-6
    # pop-ups
    popup_rate: float = 0.1
    replications: int = 100
    popup_strategies: tuple[str, ...] = ("none", "type1")
    jobs: int = 1

    def __post_init__(self):
        if self.historical_days < 1 or self.test_days < 1:
            raise ValueError("need at least one historical and one test day")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.0 <= self.popup_rate <= 1.0:
            raise ValueError("popup_rate must lie in [0, 1]")
        if self.surrogate_scope not in ("frame", "scenario"):
            raise ValueError(f"unknown surrogate scope {self.surrogate_scope!r}")
        for s in tuple(self.strategies) + tuple(self.popup_strategies):
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")

    # --- derived pieces ---

    def surrogate_config(self, input_dim: int) -> SurrogateConfig:
        return SurrogateConfig(input_dim, tuple(self.hidden), self.lr, self.epochs, self.train_size, self.toll_max,
                               self.batch_size)

    def llp_config(self) -> LlpConfig:
        return LlpConfig(max_delay=self.max_delay, backend=self.backend)

    def hlp_config(self) -> HlpSearchConfig:
        return HlpSearchConfig(n_candidates=self.n_candidates, delta_vm=self.delta_vm, max_retries=self.max_retries,
                               encoding=self.encoding,
                               follower_limits=SolveLimits(node_limit=self.follower_node_limit, mip_gap=1e-6))

    def to_dict(self) -> dict:
        doc = asdict(self)
        for k, v in doc.items():
            if isinstance(v, tuple):
                doc[k] = list(v)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: str | FsPath | None = None) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        kw = {}
        for k, v in doc.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        cfg = cls(**kw)
        if base_dir is not None:
            cfg = replace(cfg, network=_resolve(cfg.network, base_dir), demand=_resolve(cfg.demand, base_dir))
        return cfg


def _resolve(ref: str, base_dir) -> str:
    if ref.endswith(".json") and not FsPath(ref).is_absolute():
        cand = FsPath(base_dir) / ref
        if cand.exists():
            return str(cand)
    return ref


def load_scenario(source: str | FsPath | Mapping) -> ScenarioConfig:
    """Scenario by bundled name (``"ci"``), JSON path, or parsed mapping."""
    if isinstance(source, Mapping):
        return ScenarioConfig.from_dict(source)
    src = str(source)
    if not src.endswith(".json") and "/" not in src:
        text = resources.files("aam_congestion.data").joinpath(f"scenario_{src}.json").read_text()
        return ScenarioConfig.from_dict(json.loads(text))
    path = FsPath(src)
    if not path.exists():
        raise FileNotFoundError(f"scenario file {src} does not exist")
    with open(path) as fh:
        return ScenarioConfig.from_dict(json.load(fh), path.parent)


def load_scenario_network(cfg: ScenarioConfig) -> NetworkModel:
    if cfg.network == "default":
        text = resources.files("aam_congestion.data").joinpath("network_default.json").read_text()
        return load_network(json.loads(text))
    if cfg.network == "synthetic":
        return build_synthetic_network()
    if not FsPath(cfg.network).exists():
        raise FileNotFoundError(f"network file {cfg.network} does not exist")
    return load_network(cfg.network)


# --- helpers -------------------------------------------------------------------


def _pmap(fn: Callable, tasks: Sequence, jobs: int) -> list:
    """Order-preserving map, optionally over worker processes."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _r(x: float, nd: int = 2) -> float:
    return float(round(float(x), nd))


def reduction_pct(none: float, strat: float) -> float:
    """Percentage congestion reduction relative to no strategy."""
    if none <= 0:
        return 0.0
    return (none - strat) / none * 100.0


@dataclass
class Context:
    cfg: ScenarioConfig
    net: NetworkModel
    demand: DemandParams
    space: TollSpace

    @classmethod
    def build(cls, cfg: ScenarioConfig) -> "Context":
        net = load_scenario_network(cfg)
        demand = load_demand_preset(cfg.demand, net)
        space = restricted_toll_space(net, demand, cfg.n_paths, cfg.n_vertiports, cfg.toll_bins, cfg.toll_max)
        return cls(cfg, net, demand, space)

    def historical_schedule(self, day: int) -> DaySchedule:
        return sample_schedule(self.demand, self.net, stream_seed(self.cfg.seed, HISTORICAL, day))

    def test_schedule(self, day: int) -> DaySchedule:
        return sample_schedule(self.demand, self.net, stream_seed(self.cfg.seed, TEST, day))


# --- historical days -------------------------------------------------------------


@dataclass
class FrameOutcome:
    day: int
    frame: int
    flights: int
    decision: HlpDecision
    phi_true: float | None = None  # LLP optimum at the chosen tolls
    samples_skipped: int = 0
    surrogate: TrainedSurrogate | None = None

    @property
    def ratio(self) -> float | None:
        if self.phi_true is None or self.phi_true <= 0:
            return None
        return abs(self.decision.predicted_phi - self.phi_true) / self.phi_true

    def to_dict(self) -> dict:
        return {
            "day": self.day,
            "frame": self.frame,
            "flights": self.flights,
            "phi_true": None if self.phi_true is None else _r(self.phi_true),
            "phi_hat": _r(self.decision.predicted_phi),
            "approx_ratio": None if self.ratio is None else _r(100 * self.ratio),
            "samples_skipped": self.samples_skipped,
            "decision": self.decision.to_dict(),
        }


@dataclass
class HistoricalRun:
    outcomes: list[list[FrameOutcome]]
    histograms: list[list[int]]
    space: TollSpace

    def toll_history(self) -> list[list[list[float]]]:
        return [[list(o.decision.toll_array) for o in day] for day in self.outcomes]

    def decisions(self) -> list[list[HlpDecision]]:
        return [[o.decision for o in day] for day in self.outcomes]

    def to_dict(self) -> dict:
        return {
            "space": StrategyBook(self.space, [[0.0] * self.space.dim]).to_dict()["space"],
            "histograms": self.histograms,
            "frames": [[o.to_dict() for o in day] for day in self.outcomes],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "HistoricalRun":
        sp = StrategyBook.from_dict({"space": doc["space"], "frames": []}).space
        outcomes = []
        for day in doc["frames"]:
            row = []
            for o in day:
                row.append(FrameOutcome(o["day"], o["frame"], o["flights"], HlpDecision.from_dict(o["decision"]),
                                        o["phi_true"], o.get("samples_skipped", 0)))
            outcomes.append(row)
        return cls(outcomes, doc["histograms"], sp)


def _zero_decision(space: TollSpace, congestion: int, phi: float) -> HlpDecision:
    return HlpDecision(TollVector(cap=space.cap), [0.0] * space.dim, phi, congestion, congestion, congestion,
                       0.0, False, [{"index": 0, "status": "uncongested", "congestion": congestion}])


class FrameError(RuntimeError):
    pass


def _historical_frame(args) -> FrameOutcome:
    _, day, frame, _, _ = args
    try:
        return _historical_frame_inner(args)
    except Exception as exc:
        raise FrameError(f"historical day {day}, frame {frame}: {exc}") from exc


def _historical_frame_inner(args) -> FrameOutcome:
    ctx, day, frame, flights, shared = args
    cfg, net, space = ctx.cfg, ctx.net, ctx.space
    llp_cfg = cfg.llp_config()
    if not flights:
        return FrameOutcome(day, frame, 0, _zero_decision(space, 0, 0.0), None)
    base = solve_llp(net, flights, TollVector(cap=space.cap), config=llp_cfg)
    base_cong = occupancy(net, base.plans).total
    if base_cong == 0:
        # nothing to manage; the zero vector already attains the least possible congestion
        return FrameOutcome(day, frame, len(flights), _zero_decision(space, 0, base.objective), base.objective)
    scfg = cfg.surrogate_config(space.dim)
    skipped = 0
    if shared is None:
        ds = generate_dataset(net, flights, scfg, stream_seed(cfg.seed, SURROGATE, day, frame), space, llp_cfg)
        skipped = ds.skipped
        surrogate = train(ds, scfg, stream_seed(cfg.seed, SURROGATE, day, frame, 1))
    else:
        surrogate = shared
    decision = solve_hlp(net, flights, surrogate, space, cfg.hlp_config(),
                         seed=stream_seed(cfg.seed, CANDIDATES, day, frame), llp_config=llp_cfg)
    phi_true = solve_llp(net, flights, decision.tolls, config=llp_cfg).objective
    return FrameOutcome(day, frame, len(flights), decision, phi_true, skipped, surrogate if shared is None else None)


def _scenario_surrogate(ctx: Context, schedules: Sequence[DaySchedule]) -> TrainedSurrogate:
    """One surrogate for every frame, trained on samples spread over all historical frames."""
    cfg = ctx.cfg
    scfg = cfg.surrogate_config(ctx.space.dim)
    frames = [(d, m, fl) for d, s in enumerate(schedules) for m, fl in enumerate(s.frames) if fl]
    per = [cfg.train_size // len(frames) + (1 if k < cfg.train_size % len(frames) else 0) for k in range(len(frames))]
    parts = [
        generate_dataset(ctx.net, fl, scfg, stream_seed(cfg.seed, SURROGATE, d, m), ctx.space, cfg.llp_config(), size=n)
        for (d, m, fl), n in zip(frames, per)
        if n > 0
    ]
    return train(SurrogateDataset.concat(parts), scfg, stream_seed(cfg.seed, SURROGATE, 10**6))


def run_historical(cfg: ScenarioConfig, ctx: Context | None = None) -> HistoricalRun:
    """Sample each historical day, learn the value function and record HLP decisions per frame."""
    ctx = ctx or Context.build(cfg)
    schedules = [ctx.historical_schedule(d) for d in range(cfg.historical_days)]
    shared = _scenario_surrogate(ctx, schedules) if cfg.surrogate_scope == "scenario" else None
    tasks = [(ctx, d, m, fl, shared) for d, s in enumerate(schedules) for m, fl in enumerate(s.frames)]
    results = _pmap(_historical_frame, tasks, cfg.jobs)
    frames = ctx.net.time.llp_frames_per_day
    outcomes = [results[d * frames : (d + 1) * frames] for d in range(cfg.historical_days)]
    return HistoricalRun(outcomes, [s.demand_histogram for s in schedules], ctx.space)


# --- aggregation -----------------------------------------------------------------


def build_strategies(cfg: ScenarioConfig, hist: HistoricalRun, ctx: Context | None = None) -> dict:
    """Type 1 book plus one type 2 book per test day (weights depend on that day's demand)."""
    ctx = ctx or Context.build(cfg)
    frames = ctx.net.time.llp_frames_per_day
    days = [f"hist{d}" for d in range(len(hist.outcomes))]
    history = hist.toll_history()
    books = {"none": zero_strategy(hist.space, frames), "type1": aggregate_naive(history, hist.space, days)}
    hist_dists = [normalize_demand(h) for h in hist.histograms]
    for n in range(cfg.test_days):
        test_hist = ctx.test_schedule(n).demand_histogram
        books[f"type2/day{n}"] = aggregate_weighted(history, hist_dists, normalize_demand(test_hist), hist.space,
                                                    cfg.eps, days)
    return books


def book_for(books: Mapping[str, StrategyBook], strategy: str, day: int) -> StrategyBook:
    if strategy == "type2":
        return books[f"type2/day{day}"]
    return books[strategy]


# --- test days -------------------------------------------------------------------


def _deploy(args) -> int:
    net, flights, tolls, llp_cfg = args
    if not flights:
        return 0
    return occupancy(net, solve_llp(net, flights, tolls, config=llp_cfg).plans).total


def run_test_days(cfg: ScenarioConfig, books: Mapping[str, StrategyBook], strategies: Sequence[str] | None = None,
                  ctx: Context | None = None) -> dict:
    """Deploy each strategy on each test day and total the congestion."""
    ctx = ctx or Context.build(cfg)
    strategies = list(strategies or cfg.strategies)
    frames = ctx.net.time.llp_frames_per_day
    out = {"days": []}
    for n in range(cfg.test_days):
        sched = ctx.test_schedule(n)
        row = {"day": n, "flights": sched.demand_histogram, "frames": {}, "totals": {}, "reductions": {}}
        for s in strategies:
            book = book_for(books, s, n)
            if len(book.frames) != frames:
                raise ValueError(f"strategy {s} covers {len(book.frames)} frames, expected {frames}")
            tasks = [(ctx.net, sched.frames[m], book.tolls(m), cfg.llp_config()) for m in range(frames)]
            per_frame = _pmap(_deploy, tasks, cfg.jobs)
            row["frames"][s] = per_frame
            row["totals"][s] = int(sum(per_frame))
        if "none" in row["totals"]:
            for s in strategies:
                if s != "none":
                    row["reductions"][s] = _r(reduction_pct(row["totals"]["none"], row["totals"][s]), 1)
        out["days"].append(row)
    return out


# --- pop-up study ----------------------------------------------------------------


def _popup_rep(args):
    net, flights, popups, tolls, llp_cfg = args
    try:
        return occupancy(net, solve_llp(net, flights, tolls, popups, config=llp_cfg).plans).total
    except LlpInfeasible as exc:
        log.info("pop-up replication excluded: %s", exc)
        return None


def _quartiles(values: Sequence[float]) -> dict:
    if not values:
        return {"min": None, "q1": None, "median": None, "q3": None, "max": None}
    q = np.percentile(np.asarray(values, dtype=float), [0, 25, 50, 75, 100])
    return {k: _r(v, 2) for k, v in zip(("min", "q1", "median", "q3", "max"), q)}


def run_popup_study(cfg: ScenarioConfig, books: Mapping[str, StrategyBook], strategies: Sequence[str] | None = None,
                    rate: float | None = None, reps: int | None = None, ctx: Context | None = None) -> dict:
    """Monte Carlo over pop-up draws; replication r uses the same draw under every strategy."""
    ctx = ctx or Context.build(cfg)
    rate = cfg.popup_rate if rate is None else rate
    reps = cfg.replications if reps is None else reps
    if not 0.0 <= rate <= 1.0:
        raise ValueError("pop-up rate must lie in [0, 1]")
    if reps < 1:
        raise ValueError("replications must be >= 1")
    strategies = list(strategies or cfg.popup_strategies)
    frames = ctx.net.time.llp_frames_per_day
    out = {"rate": rate, "replications": reps, "days": []}
    for n in range(cfg.test_days):
        sched = ctx.test_schedule(n)
        draws = [[sample_popups(sched, rate, m, stream_seed(cfg.seed, POPUP, n, r)) for m in range(frames)]
                 for r in range(reps)]
        day = {"day": n, "strategies": {}}
        for s in strategies:
            book = book_for(books, s, n)
            base_tasks = [(ctx.net, sched.frames[m], book.tolls(m), cfg.llp_config()) for m in range(frames)]
            baseline = _pmap(_deploy, base_tasks, cfg.jobs)
            tasks = [(ctx.net, sched.frames[m], draws[r][m], book.tolls(m), cfg.llp_config())
                     for r in range(reps) for m in range(frames)]
            flat = _pmap(_popup_rep, tasks, cfg.jobs)
            grid = [flat[r * frames : (r + 1) * frames] for r in range(reps)]
            per_frame = []
            for m in range(frames):
                vals = [grid[r][m] for r in range(reps) if grid[r][m] is not None]
                per_frame.append({"frame": m, "baseline": int(baseline[m]), "n_valid": len(vals),
                                  "n_excluded": reps - len(vals), **_quartiles(vals)})
            # day totals only over replications where every frame solved
            totals = [sum(row) for row in grid if all(v is not None for v in row)]
            day["strategies"][s] = {
                "frames": per_frame,
                "baseline_total": int(sum(baseline)),
                "day_totals": _quartiles(totals),
                "n_complete": len(totals),
            }
        out["days"].append(day)
    return out


# --- report ----------------------------------------------------------------------


def build_report(cfg: ScenarioConfig, hist: HistoricalRun, tests: Mapping | None, popups: Mapping | None) -> dict:
    approx = [
        {"day": o.day, "frame": o.frame, "phi_true": _r(o.phi_true), "phi_hat": _r(o.decision.predicted_phi),
         "approx_ratio_pct": _r(100 * o.ratio)}
        for day in hist.outcomes
        for o in day
        if o.ratio is not None
    ]
    historical = [
        {
            "day": o.day,
            "frame": o.frame,
            "flights": o.flights,
            "zero_toll_congestion": o.decision.baseline_congestion,
            "managed_congestion": o.decision.realized_congestion,
            "tolls": [_r(v) for v in o.decision.toll_array],
            "fallback": o.decision.fallback,
        }
        for day in hist.outcomes
        for o in day
    ]
    return {
        "scenario": cfg.to_dict(),
        "toll_space": {"paths": list(hist.space.tolled_paths), "vertiports": list(hist.space.tolled_vertiports)},
        "historical": historical,
        "historical_histograms": hist.histograms,
        "approximation": approx,
        "test_days": tests,
        "popups": popups,
    }


def report_tables(report: Mapping) -> list[list]:
    rows = [["table", "day", "frame", "strategy", "metric", "value"]]
    for a in report["approximation"]:
        rows.append(["approximation", a["day"], a["frame"], "", "phi_true", f"{a['phi_true']:.2f}"])
        rows.append(["approximation", a["day"], a["frame"], "", "phi_hat", f"{a['phi_hat']:.2f}"])
        rows.append(["approximation", a["day"], a["frame"], "", "approx_ratio_pct", f"{a['approx_ratio_pct']:.2f}"])
    tests = report.get("test_days") or {"days": []}
    for d in tests["days"]:
        for s, total in d["totals"].items():
            rows.append(["congestion", d["day"], "all", s, "total", str(total)])
            if s in d["reductions"]:
                rows.append(["congestion", d["day"], "all", s, "reduction_pct", f"{d['reductions'][s]:.1f}"])
            for m, v in enumerate(d["frames"][s]):
                rows.append(["congestion", d["day"], m, s, "total", str(v)])
    return rows


def boxplot_rows(report: Mapping) -> list[list]:
    rows = [["day", "frame", "strategy", "baseline", "min", "q1", "median", "q3", "max", "n_valid", "n_excluded"]]
    popups = report.get("popups") or {"days": []}
    fmt = lambda v: "" if v is None else f"{v:.2f}"  # noqa: E731
    for d in popups["days"]:
        for s, blk in d["strategies"].items():
            for f in blk["frames"]:
                rows.append([d["day"], f["frame"], s, f["baseline"], fmt(f["min"]), fmt(f["q1"]), fmt(f["median"]),
                             fmt(f["q3"]), fmt(f["max"]), f["n_valid"], f["n_excluded"]])
    return rows


def write_report(report: Mapping, out: str | FsPath) -> None:
    out = FsPath(out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.json", "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    for name, rows in (("tables.csv", report_tables(report)), ("boxplot_data.csv", boxplot_rows(report))):
        with open(out / name, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)


def run_pipeline(cfg: ScenarioConfig, out: str | FsPath | None = None, popups: bool = True) -> dict:
    """Historical days -> strategies -> test days (-> pop-up study) -> report."""
    ctx = Context.build(cfg)
    hist = run_historical(cfg, ctx)
    books = build_strategies(cfg, hist, ctx)
    tests = run_test_days(cfg, books, ctx=ctx)
    pop = run_popup_study(cfg, books, ctx=ctx) if popups else None
    report = build_report(cfg, hist, tests, pop)
    if out is not None:
        write_report(report, out)
    return {"report": report, "historical": hist, "books": books, "context": ctx}
