"""Low-level planner: departure times, path choice and landing periods under tolls."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .demand import FlightRequest
from .milp import MilpModel, SolveLimits, add_big_m_indicator, add_disjunction, solve
from .network import NetworkModel

SEPARATION_TOL = 1e-6  # seconds


class LlpError(RuntimeError):
    pass


class LlpInfeasible(LlpError):
    def __init__(self, message: str, constraint_class: str):
        super().__init__(message)
        self.constraint_class = constraint_class


class PopupConflict(LlpInfeasible):
    def __init__(self, first: str, second: str, kind: str):
        super().__init__(f"pop-up flights {first} and {second} violate {kind} separation", f"popup-{kind}")
        self.pair = (first, second)


@dataclass(frozen=True)
class TollVector:
    """Path tolls and per-period landing-fee adjustments. Absent keys mean zero."""

    path_tolls: Mapping[str, float] = field(default_factory=dict)
    landing_tolls: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    cap: float = math.inf

    def __post_init__(self):
        for pid, v in self.path_tolls.items():
            if not 0.0 <= v <= self.cap + 1e-9:
                raise ValueError(f"path toll on {pid!r} outside [0, {self.cap}]: {v}")
        for vid, vals in self.landing_tolls.items():
            if any(not 0.0 <= v <= self.cap + 1e-9 for v in vals):
                raise ValueError(f"landing toll at {vid!r} outside [0, {self.cap}]")

    @property
    def tolled_paths(self) -> tuple[str, ...]:
        return tuple(self.path_tolls)

    @property
    def tolled_vertiports(self) -> tuple[str, ...]:
        return tuple(self.landing_tolls)

    def path_toll(self, pid: str) -> float:
        return self.path_tolls.get(pid, 0.0)

    def landing_toll(self, vid: str, tau: int) -> float:
        vals = self.landing_tolls.get(vid)
        return vals[tau] if vals is not None else 0.0

    def l1(self) -> float:
        return float(sum(self.path_tolls.values()) + sum(sum(v) for v in self.landing_tolls.values()))

    def to_dict(self) -> dict:
        return {
            "path_tolls": {k: float(v) for k, v in self.path_tolls.items()},
            "landing_tolls": {k: [float(x) for x in v] for k, v in self.landing_tolls.items()},
            "cap": None if math.isinf(self.cap) else self.cap,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TollVector":
        cap = doc.get("cap")
        return cls(
            dict(doc.get("path_tolls", {})),
            {k: tuple(v) for k, v in doc.get("landing_tolls", {}).items()},
            math.inf if cap is None else float(cap),
        )


ZERO_TOLLS = TollVector()


@dataclass(frozen=True)
class TollSpace:
    """Flat-vector view of a restricted toll set.

    Layout: one entry per tolled path, then ``bins`` entries per tolled
    vertiport; bin ``b`` covers the periods ``tau`` with ``tau * bins // H == b``.
    """

    tolled_paths: tuple[str, ...]
    tolled_vertiports: tuple[str, ...]
    horizon_periods: int
    bins: int = 1
    cap: float = 100.0

    @property
    def dim(self) -> int:
        return len(self.tolled_paths) + len(self.tolled_vertiports) * self.bins

    def labels(self) -> list[str]:
        return list(self.tolled_paths) + [f"{v}@{b}" for v in self.tolled_vertiports for b in range(self.bins)]

    def to_tolls(self, x) -> TollVector:
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.cap)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a toll vector of length {self.dim}, got {x.shape}")
        k = len(self.tolled_paths)
        paths = {p: float(x[i]) for i, p in enumerate(self.tolled_paths)}
        landing = {}
        for i, v in enumerate(self.tolled_vertiports):
            vals = x[k + i * self.bins : k + (i + 1) * self.bins]
            landing[v] = tuple(float(vals[t * self.bins // self.horizon_periods]) for t in range(self.horizon_periods))
        return TollVector(paths, landing, self.cap)

    def to_array(self, tolls: TollVector) -> np.ndarray:
        out = [tolls.path_toll(p) for p in self.tolled_paths]
        for v in self.tolled_vertiports:
            for b in range(self.bins):
                taus = [t for t in range(self.horizon_periods) if t * self.bins // self.horizon_periods == b]
                out.append(float(np.mean([tolls.landing_toll(v, t) for t in taus])))
        return np.array(out, dtype=float)


@dataclass(frozen=True)
class FlightPlan:
    flight_id: str
    origin: str
    destination: str
    scheduled_dep: float
    actual_dep: float
    path_id: str
    travel_time: float
    landing_period: int
    delay_cost: float
    path_cost: float
    landing_cost: float
    priority: bool = False

    @property
    def arrival(self) -> float:
        return self.actual_dep + self.travel_time

    @property
    def total_cost(self) -> float:
        return self.delay_cost + self.path_cost + self.landing_cost


@dataclass
class LlpResult:
    plans: list[FlightPlan]
    objective: float
    status: str = "optimal"
    stats: dict = field(default_factory=dict)

    def plan_cost(self) -> float:
        return float(sum(p.total_cost for p in self.plans))

    def to_dict(self) -> dict:
        return {"objective": self.objective, "status": self.status, "stats": self.stats,
                "plans": [asdict(p) for p in self.plans]}


@dataclass(frozen=True)
class LlpConfig:
    max_delay: float | None = None  # seconds; None means one frame horizon
    landing_eta: float = 1e-3  # keeps landing periods half-open
    backend: str = "highs"
    limits: SolveLimits = SolveLimits(mip_gap=1e-7)


@dataclass
class FlightVars:
    flight: FlightRequest
    dep: int
    path_vars: dict[str, int]
    land_vars: dict[int, int]
    arrival: dict[int, float]  # linear expression of the arrival instant


@dataclass
class LlpModel:
    net: NetworkModel
    milp: MilpModel
    tolls: TollVector
    config: LlpConfig
    scheduled: list[FlightVars]
    popups: list[FlightVars] = field(default_factory=list)
    cost: dict[int, float] = field(default_factory=dict)  # LLP objective (without offset)
    cost_offset: float = 0.0

    @property
    def all_flights(self) -> list[FlightVars]:
        return self.scheduled + self.popups


def _max_delay(net: NetworkModel, config: LlpConfig) -> float:
    return float(net.time.horizon_seconds if config.max_delay is None else config.max_delay)


def _add_flight(llp: LlpModel, f: FlightRequest, fixed_path: str | None = None,
                delay_cap: float | None = None, allowed: Iterable[str] | None = None) -> FlightVars:
    net, m, tolls = llp.net, llp.milp, llp.tolls
    try:
        pids = net.od_paths(f.origin, f.destination)
    except Exception:
        raise LlpError(f"flight {f.id} has no available path for {f.origin}->{f.destination}") from None
    if allowed is not None:
        keep = set(allowed)
        pids = [p for p in pids if p in keep]
        if not pids:
            raise LlpInfeasible(f"flight {f.id} has every path excluded", "path-restriction")
    if fixed_path is None:
        span = _max_delay(net, llp.config) if delay_cap is None else min(_max_delay(net, llp.config), delay_cap)
        lo, hi = f.scheduled_dep, f.scheduled_dep + max(span, 0.0)
    else:
        lo = hi = f.scheduled_dep
    dep = m.add_var(f"d[{f.id}]", lo, hi, obj=f.delay_cost)
    llp.cost[dep] = llp.cost.get(dep, 0.0) + f.delay_cost
    llp.cost_offset -= f.delay_cost * f.scheduled_dep
    m.obj_offset -= f.delay_cost * f.scheduled_dep

    path_vars = {}
    for pid in pids:
        c = net.paths[pid].base_cost + tolls.path_toll(pid)
        if fixed_path is None:
            j = m.add_binary(f"I[{f.id},{pid}]", obj=c)
        else:
            on = 1.0 if pid == fixed_path else 0.0
            j = m.add_var(f"I[{f.id},{pid}]", on, on, integer=True, obj=c)
        path_vars[pid] = j
        llp.cost[j] = c
    m.add_constraint({j: 1.0 for j in path_vars.values()}, "==", 1.0, f"onepath[{f.id}]")

    arrival = {dep: 1.0}
    for pid, j in path_vars.items():
        arrival[j] = net.paths[pid].travel_time
    a_lo, a_hi = m.expr_range(arrival)

    P = net.time.period_seconds
    last = net.time.horizon_periods - 1
    v = net.vertiports[f.destination]
    land_vars = {}
    for tau in range(net.time.period_of(a_lo), net.time.period_of(a_hi) + 1):
        fee = v.base_landing_fee[tau] + tolls.landing_toll(v.id, tau)
        z = m.add_binary(f"z[{f.id},{tau}]", obj=fee)
        llp.cost[z] = fee
        land_vars[tau] = z
        # z = 1  =>  tau*P <= arrival < (tau+1)*P, last period open-ended
        add_big_m_indicator(m, z, arrival, ">=", const=-tau * P, name=f"land_lo[{f.id},{tau}]")
        if tau < last:
            add_big_m_indicator(m, z, arrival, "<=", const=-((tau + 1) * P - llp.config.landing_eta),
                                name=f"land_hi[{f.id},{tau}]")
    m.add_constraint({z: 1.0 for z in land_vars.values()}, "==", 1.0, f"oneland[{f.id}]")
    return FlightVars(f, dep, path_vars, land_vars, arrival)


def _separate(llp: LlpModel, group: Sequence[FlightVars], gap: float, kind: str) -> None:
    m = llp.milp
    for i in range(len(group)):
        for k in range(i + 1, len(group)):
            a, b = group[i], group[k]
            ea = {a.dep: 1.0} if kind == "dep" else a.arrival
            eb = {b.dep: 1.0} if kind == "dep" else b.arrival
            if a.flight.priority and b.flight.priority:
                ta = m.expr_range(ea)[0]
                tb = m.expr_range(eb)[0]
                if abs(ta - tb) < gap - SEPARATION_TOL:
                    raise PopupConflict(a.flight.id, b.flight.id, kind)
                continue
            add_disjunction(m, ea, eb, gap, name=f"sep_{kind}[{a.flight.id},{b.flight.id}]")


def _add_separations(llp: LlpModel, new: Sequence[FlightVars], old: Sequence[FlightVars]) -> None:
    """Separation among ``new`` flights and between ``new`` and ``old`` ones, per vertiport."""
    net = llp.net
    for kind, key, gap_of in (
        ("dep", lambda fv: fv.flight.origin, lambda v: net.vertiports[v].dep_separation),
        ("arr", lambda fv: fv.flight.destination, lambda v: net.vertiports[v].arr_separation),
    ):
        groups: dict[str, tuple[list, list]] = {}
        for fv in new:
            groups.setdefault(key(fv), ([], []))[0].append(fv)
        for fv in old:
            if key(fv) in groups:
                groups[key(fv)][1].append(fv)
        for v, (fresh, existing) in groups.items():
            gap = gap_of(v)
            _separate(llp, fresh, gap, kind)
            for a in fresh:
                for b in existing:
                    _separate(llp, [b, a], gap, kind)


def build_llp(net: NetworkModel, flights: Iterable[FlightRequest], tolls: TollVector = ZERO_TOLLS,
              config: LlpConfig | None = None, delay_caps: Mapping[str, float] | None = None,
              allowed_paths: Mapping[str, Iterable[str]] | None = None) -> LlpModel:
    """Assemble the toll-shifted scheduling MILP for one frame.

    ``delay_caps`` and ``allowed_paths`` (keyed by flight id) shrink the
    departure window and path set of individual flights below the defaults.
    """
    config = config or LlpConfig()
    delay_caps = delay_caps or {}
    allowed_paths = allowed_paths or {}
    llp = LlpModel(net, MilpModel("llp"), tolls, config, [])
    for f in flights:
        llp.scheduled.append(_add_flight(llp, f, delay_cap=delay_caps.get(f.id), allowed=allowed_paths.get(f.id)))
    _add_separations(llp, llp.scheduled, [])
    return llp


def add_popup_constraints(llp: LlpModel, popups: Iterable[FlightRequest]) -> LlpModel:
    """Add priority flights pinned to their sampled time and shortest path.

    Scheduled flights must keep separation from them; the pop-up side of each
    separation is a constant.
    """
    popups = list(popups)
    if not popups:
        return llp
    for f in popups:
        if not f.priority:
            raise ValueError(f"flight {f.id} is not flagged as priority")
    new = []
    for f in popups:
        sp = llp.net.shortest_path(f.origin, f.destination)
        new.append(_add_flight(llp, f, fixed_path=sp.id))
    llp.popups.extend(new)
    _add_separations(llp, new, llp.scheduled)
    return llp


def _extract(llp: LlpModel, x) -> list[FlightPlan]:
    net, tolls = llp.net, llp.tolls
    plans = []
    for fv in llp.all_flights:
        f = fv.flight
        d = float(x[fv.dep])
        pid = max(fv.path_vars, key=lambda p: x[fv.path_vars[p]])
        tau = max(fv.land_vars, key=lambda t: x[fv.land_vars[t]])
        path = net.paths[pid]
        plans.append(
            FlightPlan(
                f.id,
                f.origin,
                f.destination,
                f.scheduled_dep,
                d,
                pid,
                path.travel_time,
                tau,
                f.delay_cost * (d - f.scheduled_dep),
                path.base_cost + tolls.path_toll(pid),
                net.vertiports[f.destination].base_landing_fee[tau] + tolls.landing_toll(f.destination, tau),
                f.priority,
            )
        )
    return plans


def check_separations(net: NetworkModel, plans: Sequence[FlightPlan], tol: float = SEPARATION_TOL) -> list[tuple]:
    """All (kind, vertiport, flight, flight, gap, required) separation violations."""
    out = []
    for kind in ("dep", "arr"):
        groups: dict[str, list[FlightPlan]] = {}
        for p in plans:
            groups.setdefault(p.origin if kind == "dep" else p.destination, []).append(p)
        for v, group in groups.items():
            vp = net.vertiports[v]
            need = vp.dep_separation if kind == "dep" else vp.arr_separation
            times = sorted(((p.actual_dep if kind == "dep" else p.arrival), p.flight_id) for p in group)
            for (t0, f0), (t1, f1) in zip(times, times[1:]):
                if t1 - t0 < need - tol:
                    out.append((kind, v, f0, f1, t1 - t0, need))
    return out


def check_plans(net: NetworkModel, plans: Sequence[FlightPlan], tol: float = 1e-5) -> list[str]:
    """Plan-level invariants: no early departure, landing period brackets the arrival."""
    problems = []
    P = net.time.period_seconds
    last = net.time.horizon_periods - 1
    for p in plans:
        if p.actual_dep < p.scheduled_dep - tol:
            problems.append(f"{p.flight_id} departs early")
        if p.arrival < p.landing_period * P - tol or (p.landing_period < last and p.arrival >= (p.landing_period + 1) * P + tol):
            problems.append(f"{p.flight_id} lands outside period {p.landing_period}")
        if p.priority and abs(p.actual_dep - p.scheduled_dep) > tol:
            problems.append(f"pop-up {p.flight_id} was delayed")
    return problems


def _diagnose(llp: LlpModel) -> str:
    """Name the constraint class that makes an infeasible LLP infeasible."""
    net = llp.net
    flights = [fv.flight for fv in llp.scheduled]
    relaxed_net = NetworkModel(
        {k: type(v)(v.id, 1e9, 1e9, v.base_landing_fee, v.busy) for k, v in net.vertiports.items()},
        net.paths, net.sectors, net.time, net.od_pairs,
    )
    trial = build_llp(relaxed_net, flights, llp.tolls, llp.config)
    if solve(trial.milp, llp.config.limits, llp.config.backend).status == "infeasible":
        return "time-window"
    return "vertiport-separation"


def solve_llp(net: NetworkModel, flights: Iterable[FlightRequest], tolls: TollVector = ZERO_TOLLS,
              popups: Iterable[FlightRequest] = (), config: LlpConfig | None = None) -> LlpResult:
    config = config or LlpConfig()
    flights = list(flights)
    llp = build_llp(net, flights, tolls, config)
    add_popup_constraints(llp, popups)
    return solve_llp_model(llp)


def solve_llp_model(llp: LlpModel) -> LlpResult:
    m = llp.milp
    if m.num_vars == 0:
        return LlpResult([], 0.0, "optimal", {"vars": 0, "constraints": 0, "nodes": 0, "wall_time": 0.0})
    sol = solve(m, llp.config.limits, llp.config.backend)
    stats = {"vars": m.num_vars, "constraints": m.num_constraints, "nodes": sol.nodes,
             "wall_time": sol.wall_time, "binaries": int(sum(m.integer))}
    if sol.status == "infeasible":
        cls = _diagnose(llp)
        raise LlpInfeasible(f"LLP infeasible ({cls}) with {len(llp.all_flights)} flights", cls)
    if not sol.has_solution:
        raise LlpError(f"LLP solve ended with status {sol.status} and no incumbent")
    plans = _extract(llp, sol.x)
    bad = check_separations(llp.net, plans)
    if bad:
        raise LlpError(f"separation violated after solve: {bad[:3]}")
    problems = check_plans(llp.net, plans)
    if problems:
        raise LlpError("; ".join(problems[:3]))
    objective = float(sum(p.total_cost for p in plans))
    if abs(objective - sol.objective) > 1e-6 * max(1.0, abs(objective)):
        raise LlpError(f"objective {sol.objective} disagrees with plan costs {objective}")
    return LlpResult(plans, objective, sol.status, stats)


def result_to_csv(result: LlpResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["flight_id", "origin", "destination", "scheduled_dep", "actual_dep", "path_id",
                    "landing_period", "delay_cost", "path_cost", "landing_cost", "priority"])
        for p in result.plans:
            w.writerow([p.flight_id, p.origin, p.destination, f"{p.scheduled_dep:.3f}", f"{p.actual_dep:.3f}",
                        p.path_id, p.landing_period, f"{p.delay_cost:.2f}", f"{p.path_cost:.2f}",
                        f"{p.landing_cost:.2f}", int(p.priority)])


def result_to_json(result: LlpResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(result.to_dict(), fh, indent=1)
