"""High-level planner: congestion accounting and toll selection.

The leader problem is solved over a finite candidate set of toll vectors.
For each candidate the follower is re-optimised for congestion, subject to
the scheduling constraints and to a value-matching cap: the follower's cost
under the candidate tolls may not exceed the surrogate's predicted optimum
by more than a relative margin.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy.stats import qmc

from .demand import FlightRequest
from .llp import (
    FlightPlan,
    LlpConfig,
    LlpModel,
    TollSpace,
    TollVector,
    build_llp,
    check_plans,
    check_separations,
    solve_llp,
    _extract,
)
from .milp import SolveLimits, add_big_m_indicator, solve
from .network import NetworkModel

log = logging.getLogger(__name__)


@dataclass
class CongestionReport:
    delta: dict[str, list[int]]  # sector -> per-period flights above capacity
    counts: dict[str, list[int]]  # sector -> per-period traffic count
    frame_totals: list[int] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(sum(sum(v) for v in self.delta.values()))

    def to_dict(self) -> dict:
        return {"total": self.total, "frame_totals": self.frame_totals, "delta": self.delta, "counts": self.counts}


def occupied_periods(net: NetworkModel, plan: FlightPlan) -> dict[str, set[int]]:
    """Sector -> periods overlapped by the flight's stay in it."""
    grid = net.time
    out: dict[str, set[int]] = {}
    for sector, start, end in net.paths[plan.path_id].segments():
        t0 = plan.actual_dep + start
        t1 = plan.actual_dep + end
        out.setdefault(sector, set()).update(range(grid.period_of(t0), grid.period_ending(t1) + 1))
    return out


def occupancy(net: NetworkModel, plans: Sequence[FlightPlan]) -> CongestionReport:
    """Traffic counts and congestion (flights above capacity) per sector and period."""
    H = net.time.horizon_periods
    counts = {a: [0] * H for a in net.sectors}
    for plan in plans:
        if plan.path_id not in net.paths:
            raise KeyError(f"plan {plan.flight_id} references unknown path {plan.path_id!r}")
        for sector, periods in occupied_periods(net, plan).items():
            for tau in periods:
                counts[sector][tau] += 1
    delta = {}
    for a, row in counts.items():
        cap = net.sectors[a].capacity
        delta[a] = [0 if math.isinf(cap) else int(max(0, c - cap)) for c in row]
    report = CongestionReport(delta, counts)
    report.frame_totals = [report.total]
    return report


class ValueFunction(Protocol):
    def predict(self, x) -> float: ...


class ExactValue:
    """Stand-in surrogate that solves the LLP for every query."""

    def __init__(self, net: NetworkModel, flights: Sequence[FlightRequest], space: TollSpace,
                 config: LlpConfig | None = None):
        self.net, self.flights, self.space, self.config = net, list(flights), space, config

    def predict(self, x) -> float:
        return solve_llp(self.net, self.flights, self.space.to_tolls(x), config=self.config).objective


@dataclass(frozen=True)
class HlpSearchConfig:
    n_candidates: int = 64
    delta_vm: float = 0.02
    max_retries: int = 3
    exact_delta: bool = True  # materialise the mu/Delta big-M upper rows
    encoding: str = "interval"
    early_stop: bool = True
    follower_limits: SolveLimits = SolveLimits(node_limit=20000, mip_gap=1e-6)  # node cap keeps runs repeatable


@dataclass
class HlpDecision:
    tolls: TollVector
    toll_array: list[float]
    predicted_phi: float
    realized_congestion: int
    zero_toll_congestion: int
    baseline_congestion: int
    delta_vm: float
    fallback: bool = False
    log: list[dict] = field(default_factory=list)
    plans: list[FlightPlan] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "tolls": self.tolls.to_dict(),
            "toll_array": [round(float(v), 6) for v in self.toll_array],
            "predicted_phi": round(float(self.predicted_phi), 6),
            "realized_congestion": int(self.realized_congestion),
            "zero_toll_congestion": int(self.zero_toll_congestion),
            "baseline_congestion": int(self.baseline_congestion),
            "delta_vm": self.delta_vm,
            "fallback": self.fallback,
            "log": self.log,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HlpDecision":
        return cls(
            TollVector.from_dict(doc["tolls"]),
            list(doc["toll_array"]),
            float(doc["predicted_phi"]),
            int(doc["realized_congestion"]),
            int(doc["zero_toll_congestion"]),
            int(doc["baseline_congestion"]),
            float(doc["delta_vm"]),
            bool(doc.get("fallback", False)),
            list(doc.get("log", [])),
        )


@dataclass
class _Segment:
    flight: int
    path: str
    sector: str
    entry: tuple[float, float]  # instant range over the departure box
    exit: tuple[float, float]
    offsets: tuple[float, float]

    def window(self, grid) -> range:
        return range(grid.period_of(self.entry[0]), grid.period_ending(self.exit[1]) + 1)


def _segments(llp: LlpModel) -> list[_Segment]:
    net, m = llp.net, llp.milp
    out = []
    for i, fv in enumerate(llp.all_flights):
        d_lo, d_hi = m.lb[fv.dep], m.ub[fv.dep]
        for pid, j in fv.path_vars.items():
            if m.ub[j] < 0.5:
                continue
            for sector, s0, s1 in net.paths[pid].segments():
                if math.isinf(net.sectors[sector].capacity):
                    continue
                out.append(_Segment(i, pid, sector, (d_lo + s0, d_hi + s0), (d_lo + s1, d_hi + s1), (s0, s1)))
    return out


def _hot_cells(net, segs) -> tuple[dict, set]:
    """Sector-periods that more flights than capacity could possibly reach."""
    grid = net.time
    potential: dict[tuple[str, int], set[int]] = {}
    for seg in segs:
        for tau in seg.window(grid):
            potential.setdefault((seg.sector, tau), set()).add(seg.flight)
    hot = {key for key, fl in potential.items() if len(fl) > net.sectors[key[0]].capacity}
    return potential, hot


def _add_term(target: dict, expr: Mapping[int, float]) -> None:
    for j, a in expr.items():
        target[j] = target.get(j, 0.0) + a


def _period_counts(llp: LlpModel, segs, hot, eta) -> dict:
    """Per-segment entry/exit period indicators; a flight occupies every period
    from the one it enters in up to the one it leaves in."""
    net, m = llp.net, llp.milp
    grid = net.time
    P = grid.period_seconds
    last = grid.horizon_periods - 1
    occ: dict[tuple[int, str, str], dict[int, list[dict[int, float]]]] = {}
    for seg in segs:
        if not any((seg.sector, tau) in hot for tau in seg.window(grid)):
            continue
        fv = llp.all_flights[seg.flight]
        path_var = fv.path_vars[seg.path]
        tag = f"{fv.flight.id},{seg.path},{seg.sector}@{seg.offsets[0]:g}"
        s0, s1 = seg.offsets
        ins = {}
        for tau in range(grid.period_of(seg.entry[0]), grid.period_of(seg.entry[1]) + 1):
            lam = ins[tau] = m.add_binary(f"lin[{tag},{tau}]")
            add_big_m_indicator(m, lam, {fv.dep: 1.0}, ">=", const=s0 - tau * P, name=f"lin_lo[{tag},{tau}]")
            if tau < last:
                add_big_m_indicator(m, lam, {fv.dep: 1.0}, "<=", const=s0 - ((tau + 1) * P - eta),
                                    name=f"lin_hi[{tag},{tau}]")
        outs = {}
        for tau in range(grid.period_ending(seg.exit[0]), grid.period_ending(seg.exit[1]) + 1):
            lam = outs[tau] = m.add_binary(f"lout[{tag},{tau}]")
            add_big_m_indicator(m, lam, {fv.dep: 1.0}, ">=", const=s1 - (tau * P + eta), name=f"lout_lo[{tag},{tau}]")
            if tau < last:
                add_big_m_indicator(m, lam, {fv.dep: 1.0}, "<=", const=s1 - (tau + 1) * P,
                                    name=f"lout_hi[{tag},{tau}]")
        for group in (ins, outs):
            row = {lam: 1.0 for lam in group.values()}
            row[path_var] = -1.0
            m.add_constraint(row, "==", 0.0, f"one_period[{tag}]")
        key = (seg.flight, seg.path, seg.sector)
        for tau in seg.window(grid):
            if (seg.sector, tau) not in hot:
                continue
            expr: dict[int, float] = {}
            _add_term(expr, {lam: 1.0 for t_in, lam in ins.items() if t_in <= tau})
            _add_term(expr, {lam: -1.0 for t_out, lam in outs.items() if t_out < tau})
            occ.setdefault(key, {}).setdefault(tau, []).append(expr)

    # a flight counts once per sector-period even if its path re-enters the sector
    counts: dict[tuple[str, int], dict[int, float]] = {}
    for (fi, pid, sector), by_tau in occ.items():
        for tau, exprs in by_tau.items():
            target = counts.setdefault((sector, tau), {})
            if len(exprs) == 1:
                _add_term(target, exprs[0])
                continue
            kappa = m.add_binary(f"kappa[{fi},{pid},{sector},{tau}]")
            for e in exprs:
                row = dict(e)
                row[kappa] = row.get(kappa, 0.0) - 1.0
                m.add_constraint(row, "<=", 0.0)
            target[kappa] = target.get(kappa, 0.0) + 1.0
    return counts


def _pattern(net, path, d: float, hot) -> frozenset:
    grid = net.time
    cells = set()
    for sector, s0, s1 in path.segments():
        for tau in range(grid.period_of(d + s0), grid.period_ending(d + s1) + 1):
            if (sector, tau) in hot:
                cells.add((sector, tau))
    return frozenset(cells)


def departure_intervals(net: NetworkModel, path, lo: float, hi: float, hot, eta: float = 1e-3):
    """Split the departure window [lo, hi] into runs with a constant hot-cell pattern.

    Returns a list of (start, end, pattern) with closed ends. Breakpoints that
    belong to one side only are kept off the other side by ``eta`` seconds.
    """
    P = net.time.period_seconds
    cuts = set()
    for _, s0, s1 in path.segments():
        for off in (s0, s1):
            k0, k1 = math.ceil((lo + off) / P), math.floor((hi + off) / P)
            for k in range(k0, k1 + 1):
                b = k * P - off
                if lo < b < hi:
                    cuts.add(b)
    cuts = sorted(cuts)
    if not cuts:
        return [(lo, hi, _pattern(net, path, 0.5 * (lo + hi), hot))]
    # alternate open gaps and breakpoints, each tagged with its pattern
    edges = [lo] + cuts + [hi]
    pieces = []  # (kind, left, right, pattern)
    pieces.append(("point", lo, lo, _pattern(net, path, lo, hot)))
    for a, b in zip(edges, edges[1:]):
        pieces.append(("gap", a, b, _pattern(net, path, 0.5 * (a + b), hot)))
        pieces.append(("point", b, b, _pattern(net, path, b, hot)))
    runs = []
    for piece in pieces:
        if runs and runs[-1][-1][3] == piece[3]:
            runs[-1].append(piece)
        else:
            runs.append([piece])
    out = []
    for run in runs:
        first, final = run[0], run[-1]
        left = first[1] if first[0] != "gap" else first[1] + eta
        right = final[2] if final[0] != "gap" else final[2] - eta
        if left <= right:
            out.append((left, right, first[3]))
    return out


def _interval_counts(llp: LlpModel, segs, hot, eta) -> dict:
    """Departure-interval indicators: one binary per run of departure times over
    which the path's set of hot sector-periods does not change."""
    net, m = llp.net, llp.milp
    touched: dict[tuple[int, str], bool] = {}
    grid = net.time
    for seg in segs:
        if any((seg.sector, tau) in hot for tau in seg.window(grid)):
            touched[(seg.flight, seg.path)] = True
    counts: dict[tuple[str, int], dict[int, float]] = {}
    for fi, pid in sorted(touched):
        fv = llp.all_flights[fi]
        path_var = fv.path_vars[pid]
        lo, hi = m.lb[fv.dep], m.ub[fv.dep]
        runs = departure_intervals(net, net.paths[pid], lo, hi, hot, eta)
        tag = f"{fv.flight.id},{pid}"
        if len(runs) == 1:
            for cell in runs[0][2]:
                _add_term(counts.setdefault(cell, {}), {path_var: 1.0})
            continue
        betas = []
        for k, (a, b, cells) in enumerate(runs):
            beta = m.add_binary(f"beta[{tag},{k}]")
            betas.append((beta, a, b))
            for cell in cells:
                _add_term(counts.setdefault(cell, {}), {beta: 1.0})
        row = {beta: 1.0 for beta, _, _ in betas}
        row[path_var] = -1.0
        m.add_constraint(row, "==", 0.0, f"one_interval[{tag}]")
        # d within the selected run; relaxed to the full box when the path is unused
        lo_row = {fv.dep: 1.0, path_var: lo}
        hi_row = {fv.dep: 1.0, path_var: hi}
        for beta, a, b in betas:
            lo_row[beta] = lo_row.get(beta, 0.0) - a
            hi_row[beta] = hi_row.get(beta, 0.0) - b
        m.add_constraint(lo_row, ">=", lo, f"interval_lo[{tag}]")
        m.add_constraint(hi_row, "<=", hi, f"interval_hi[{tag}]")
    return counts


ENCODINGS = ("interval", "period")


def build_follower(llp: LlpModel, budget: float, exact_delta: bool = True,
                   encoding: str = "interval") -> tuple[LlpModel, dict]:
    """Turn an LLP model into the congestion-minimising follower with a cost cap.

    Only sector-periods that can hold more flights than their capacity get a
    congestion variable; flights that can never reach such a sector-period are
    left out of the occupancy encoding. ``encoding`` picks how sector
    occupancy is tied to the departure time: per-segment entry/exit period
    indicators (``"period"``) or per-path departure intervals (``"interval"``).
    """
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown occupancy encoding {encoding!r}")
    net, m = llp.net, llp.milp
    eta = llp.config.landing_eta
    segs = _segments(llp)
    potential, hot = _hot_cells(net, segs)
    counts = (_interval_counts if encoding == "interval" else _period_counts)(llp, segs, hot, eta)

    # objective: congestion first, cost as a tie-break worth < 1 flight in total
    weight = 0.5 / max(abs(budget), 1.0)
    objective = [0.0] * m.num_vars
    for j, c in llp.cost.items():
        objective[j] = weight * c
    m.obj = objective
    m.obj_offset = weight * llp.cost_offset
    deltas = {}
    for (sector, tau), expr in sorted(counts.items()):
        expr = {j: a for j, a in expr.items() if a != 0.0}
        cap = net.sectors[sector].capacity
        n_max = len(potential[(sector, tau)])
        if not expr or n_max <= cap:
            continue
        dv = m.add_var(f"Delta[{sector},{tau}]", 0.0, n_max - cap, obj=1.0)
        deltas[(sector, tau)] = dv
        row = {j: -a for j, a in expr.items()}
        row[dv] = 1.0
        m.add_constraint(row, ">=", -cap, f"delta_lo[{sector},{tau}]")
        if exact_delta:
            mu = m.add_binary(f"mu[{sector},{tau}]")
            add_big_m_indicator(m, mu, row, "<=", const=cap, name=f"delta_hi[{sector},{tau}]")
            m.add_constraint({dv: 1.0, mu: -(n_max - cap)}, "<=", 0.0, f"delta_mu[{sector},{tau}]")

    m.add_constraint(dict(llp.cost), "<=", budget - llp.cost_offset, "value_matching")
    return llp, {"deltas": deltas, "weight": weight, "hot": hot}


def _congestion(net, plans) -> int:
    return occupancy(net, plans).total


def budget_bounds(net: NetworkModel, flights: Sequence[FlightRequest], tolls: TollVector, budget: float):
    """Per-flight delay caps and admissible paths implied by a total cost budget.

    Every flight pays at least its cheapest path plus the cheapest landing fee
    at its destination. Whatever the budget leaves above that floor is the most
    any single flight can spend on delay or on a dearer path. Returns
    ``(slack, delay_caps, allowed_paths)``; a negative slack means no schedule
    fits the budget.
    """
    floors, path_costs = {}, {}
    H = net.time.horizon_periods
    for f in flights:
        costs = {pid: net.paths[pid].base_cost + tolls.path_toll(pid) for pid in net.od_paths(f.origin, f.destination)}
        v = net.vertiports[f.destination]
        land = min(v.base_landing_fee[t] + tolls.landing_toll(v.id, t) for t in range(H))
        path_costs[f.id] = costs
        floors[f.id] = min(costs.values()) + land
    slack = budget - sum(floors.values())
    tol = 1e-7 * max(1.0, abs(budget))
    caps, allowed = {}, {}
    for f in flights:
        if f.delay_cost > 0:
            caps[f.id] = (slack + tol) / f.delay_cost
        cheapest = min(path_costs[f.id].values())
        allowed[f.id] = [pid for pid, c in path_costs[f.id].items() if c - cheapest <= slack + tol]
    return slack, caps, allowed


def evaluate_candidate(net, flights, tolls: TollVector, budget: float, llp_config: LlpConfig,
                       cfg: HlpSearchConfig) -> tuple[str, int | None, list[FlightPlan]]:
    slack, caps, allowed = budget_bounds(net, flights, tolls, budget)
    if slack < -1e-7 * max(1.0, abs(budget)):
        return "infeasible", None, []
    llp = build_llp(net, flights, tolls, llp_config, delay_caps=caps, allowed_paths=allowed)
    build_follower(llp, budget, cfg.exact_delta, cfg.encoding)
    sol = solve(llp.milp, cfg.follower_limits, llp_config.backend)
    if not sol.has_solution:
        return sol.status, None, []
    plans = _extract(llp, sol.x)
    if check_separations(net, plans) or check_plans(net, plans):
        raise RuntimeError("follower plans violate scheduling constraints")
    cost = sum(p.total_cost for p in plans)
    if cost > budget * (1 + 1e-9) + 1e-6:
        raise RuntimeError(f"follower cost {cost} exceeds value-matching budget {budget}")
    return sol.status, _congestion(net, plans), plans


def candidate_set(space: TollSpace, n: int, seed: int) -> np.ndarray:
    """Zero vector followed by ``n`` Latin-hypercube points over the toll box."""
    if n <= 0 or space.dim == 0:
        return np.zeros((1, space.dim))
    pts = qmc.LatinHypercube(d=space.dim, seed=np.random.default_rng(seed)).random(n) * space.cap
    return np.vstack([np.zeros(space.dim), np.round(pts, 6)])


def solve_hlp(net: NetworkModel, flights: Sequence[FlightRequest], surrogate: ValueFunction, space: TollSpace,
              cfg: HlpSearchConfig | None = None, seed: int = 0, llp_config: LlpConfig | None = None,
              candidates: np.ndarray | None = None) -> HlpDecision:
    """Pick the candidate toll vector with the least follower congestion.

    Ties go to the lower predicted value, then to the smaller toll L1 norm.
    """
    cfg = cfg or HlpSearchConfig()
    llp_config = llp_config or LlpConfig()
    flights = list(flights)
    base = solve_llp(net, flights, TollVector(cap=space.cap), config=llp_config)
    baseline = _congestion(net, base.plans)
    cands = candidate_set(space, cfg.n_candidates, seed) if candidates is None else np.asarray(candidates, float)
    if not np.any(np.all(cands == 0.0, axis=1)):
        cands = np.vstack([np.zeros(space.dim), cands])
    preds = np.array([float(surrogate.predict(x)) for x in cands])
    l1 = cands.sum(axis=1)
    order = sorted(range(len(cands)), key=lambda i: (preds[i], l1[i], i))
    zero_idx = next(i for i in range(len(cands)) if not np.any(cands[i]))

    delta = cfg.delta_vm
    for attempt in range(cfg.max_retries + 1):
        entries: list[dict] = []
        best = None
        results: dict[int, tuple] = {}
        for i in order:
            if cfg.early_stop and best is not None and best[0] == 0 and i != zero_idx:
                continue
            tolls = space.to_tolls(cands[i])
            budget = preds[i] * (1.0 + delta)
            status, cong, plans = evaluate_candidate(net, flights, tolls, budget, llp_config, cfg)
            entries.append({"index": int(i), "tolls": [round(float(v), 6) for v in cands[i]],
                            "phi_hat": round(float(preds[i]), 6), "status": status, "congestion": cong})
            if cong is None:
                continue
            results[i] = (cong, plans)
            key = (cong, preds[i], l1[i], i)
            if best is None or key < best:
                best = key
        if best is not None:
            break
        log.warning("no candidate feasible under value matching at delta=%.4f; doubling", delta)
        if attempt < cfg.max_retries:
            delta *= 2.0
    else:
        log.warning("falling back to zero tolls after %d retries", cfg.max_retries)
        return HlpDecision(TollVector(cap=space.cap), [0.0] * space.dim, float(preds[zero_idx]), baseline, baseline,
                           baseline, delta, True, entries, base.plans)

    # the zero vector always competes; if value matching rejected it, its true response stands in
    if zero_idx in results:
        zero_cong = results[zero_idx][0]
    else:
        zero_cong = baseline
        results[zero_idx] = (baseline, base.plans)
        key = (baseline, preds[zero_idx], 0.0, zero_idx)
        if key < best:
            best = key
    i = best[3]
    cong, plans = results[i]
    return HlpDecision(space.to_tolls(cands[i]), [float(v) for v in cands[i]], float(preds[i]), int(cong),
                       int(zero_cong), baseline, delta, False, entries, plans)
