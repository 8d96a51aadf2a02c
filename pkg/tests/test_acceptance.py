"""Acceptance criteria, one test each, each printing a single PASS/FAIL line.

The heavy fixtures (paper-scale surrogates, two preset pipelines) are module
scoped so every criterion that needs them shares one computation.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from aam_congestion.aggregation import inverse_distance_weights, wasserstein_1d
from aam_congestion.harness import (
    SURROGATE,
    CANDIDATES,
    Context,
    build_strategies,
    load_scenario,
    run_historical,
    run_pipeline,
    run_popup_study,
    run_test_days,
    stream_seed,
)
from aam_congestion.hlp import solve_hlp
from aam_congestion.llp import LlpConfig, solve_llp
from aam_congestion.milp import solve
from aam_congestion.surrogate import approx_ratio, full_toll_space, generate_dataset, train

from conftest import SEPARATION_AUDIT, record_criterion
from oracles import brute_force_llp, enumerate_milp, random_llp_instance, random_milp, sweep_occupancy

PRESETS = ("set1", "set2")


# --- 1. MILP kernel against enumeration -------------------------------------------------


def test_criterion_01_milp_exact():
    mismatches, solver_time = [], 0.0
    for k in range(100):
        model = random_milp(np.random.default_rng(5000 + k))
        status, best = enumerate_milp(model)
        t0 = time.perf_counter()
        sol = solve(model, backend="native")
        solver_time += time.perf_counter() - t0
        if sol.status != status or (status == "optimal" and abs(sol.objective - best) > 1e-9):
            mismatches.append((k, status, best, sol.status, sol.objective))
    ok = not mismatches and solver_time < 10.0
    record_criterion(1, ok, f"100 random MILPs, {len(mismatches)} mismatches, native solve time {solver_time:.2f} s")
    assert ok, mismatches[:5]


# --- 2. LLP against brute force ------------------------------------------------------


def test_criterion_02_llp_brute_force():
    cfg = LlpConfig(max_delay=900.0)
    worst, solver_time, bad = 0.0, 0.0, []
    for k in range(20):
        net, flights, tolls = random_llp_instance(np.random.default_rng(7000 + k), 4)
        t0 = time.perf_counter()
        res = solve_llp(net, flights, tolls, config=cfg)
        solver_time += time.perf_counter() - t0
        brute, _ = brute_force_llp(net, flights, tolls, grid=10.0, max_delay=900.0)
        gap = abs(res.objective - brute) / brute
        worst = max(worst, gap)
        if gap > 0.01:
            bad.append((k, res.objective, brute))
    ok = not bad and solver_time < 60.0
    record_criterion(2, ok, f"20 four-flight LLPs, worst gap {100 * worst:.3f} %, solve time {solver_time:.2f} s")
    assert ok, bad


# --- 4 and 5. surrogate accuracy -----------------------------------------------------


@pytest.fixture(scope="module")
def paper_scale():
    """Paper-scale restricted surrogates for one historical day, one per frame."""
    cfg = load_scenario("default")
    ctx = Context.build(cfg)
    llp_cfg = cfg.llp_config()
    scfg = cfg.surrogate_config(ctx.space.dim)
    day = 0
    rows = []
    t0 = time.perf_counter()
    for m, flights in enumerate(ctx.historical_schedule(day).frames):
        if not flights:
            continue
        ds = generate_dataset(ctx.net, flights, scfg, stream_seed(cfg.seed, SURROGATE, day, m), ctx.space, llp_cfg)
        s = train(ds, scfg, stream_seed(cfg.seed, SURROGATE, day, m, 1))
        dec = solve_hlp(ctx.net, flights, s, ctx.space, cfg.hlp_config(),
                        seed=stream_seed(cfg.seed, CANDIDATES, day, m), llp_config=llp_cfg)
        phi = solve_llp(ctx.net, flights, dec.tolls, config=llp_cfg).objective
        held_out = not np.any(np.all(np.isclose(ds.X, dec.toll_array), axis=1))
        rows.append({"frame": m, "flights": flights, "decision": dec, "phi": phi, "held_out": held_out,
                     "ratio": approx_ratio(s, dec.toll_array, phi), "size": len(ds)})
    return {"cfg": cfg, "ctx": ctx, "rows": rows, "elapsed": time.perf_counter() - t0}


def test_criterion_04_surrogate_accuracy(paper_scale):
    rows = paper_scale["rows"]
    ratios = [r["ratio"] for r in rows]
    med = float(np.median(ratios))
    elapsed = paper_scale["elapsed"]
    ok = (len(rows) == 8 and all(r["held_out"] and r["size"] == 1000 for r in rows)
          and med <= 0.10 and elapsed <= 1800.0)
    record_criterion(4, ok, f"median ratio {100 * med:.2f} % over {len(rows)} chosen vectors "
                            f"(mean {100 * np.mean(ratios):.2f} %), {elapsed / 60:.1f} min")
    assert ok, ratios


def test_criterion_05_restricted_beats_full(paper_scale):
    cfg, ctx = paper_scale["cfg"], paper_scale["ctx"]
    llp_cfg = cfg.llp_config()
    full = full_toll_space(ctx.net, cap=cfg.toll_max)
    fcfg = cfg.surrogate_config(full.dim)
    full_ratios = []
    for r in paper_scale["rows"]:
        m = r["frame"]
        ds = generate_dataset(ctx.net, r["flights"], fcfg, stream_seed(cfg.seed, SURROGATE, 0, m), full, llp_cfg)
        s = train(ds, fcfg, stream_seed(cfg.seed, SURROGATE, 0, m, 1))
        # the same toll schedule, written in full-space coordinates
        x = full.to_array(r["decision"].tolls)
        full_ratios.append(approx_ratio(s, x, r["phi"]))
    restricted = float(np.median([r["ratio"] for r in paper_scale["rows"]]))
    wide = float(np.median(full_ratios))
    ok = full.dim == 147 and restricted < wide
    record_criterion(5, ok, f"median ratio restricted {100 * restricted:.2f} % vs full {full.dim}-dim "
                            f"{100 * wide:.2f} %")
    assert ok, full_ratios


# --- 6, 7, 8. presets end to end -----------------------------------------------------


@pytest.fixture(scope="module")
def preset_runs():
    runs = {}
    for name in PRESETS:
        cfg = replace(load_scenario("ci"), demand=name, name=f"ci-{name}")
        ctx = Context.build(cfg)
        hist = run_historical(cfg, ctx)
        books = build_strategies(cfg, hist, ctx)
        runs[name] = {"cfg": cfg, "ctx": ctx, "hist": hist, "books": books,
                      "tests": run_test_days(cfg, books, ["none", "type1", "type2"], ctx)}
    return runs


def test_criterion_06_congestion_reduction(preset_runs):
    ok, parts = True, []
    for name, run in preset_runs.items():
        days = run["tests"]["days"]
        wins = 0
        for d in days:
            red = d["reductions"]
            ok &= red["type1"] >= 15.0 and red["type2"] >= 15.0
            wins += d["totals"]["type2"] <= d["totals"]["type1"]
            parts.append(f"{name} d{d['day']} {d['totals']['none']}->{d['totals']['type1']}/{d['totals']['type2']}"
                         f" ({red['type1']:.1f}/{red['type2']:.1f} %)")
        ok &= wins > len(days) / 2
        parts.append(f"{name} type2<=type1 on {wins}/{len(days)}")
    record_criterion(6, ok, "; ".join(parts))
    assert ok, parts


def test_criterion_07_non_harm(preset_runs, paper_scale):
    decisions = [(f"{n} d{o.day} f{o.frame}", o.decision) for n, run in preset_runs.items()
                 for day in run["hist"].outcomes for o in day]
    decisions += [(f"paper f{r['frame']}", r["decision"]) for r in paper_scale["rows"]]
    net = next(iter(preset_runs.values()))["ctx"].net
    bad = []
    for tag, dec in decisions:
        if dec.realized_congestion > dec.baseline_congestion or dec.zero_toll_congestion > dec.baseline_congestion:
            bad.append(tag)
        # independent recount of the follower schedule behind the decision
        if dec.plans and sum(sweep_occupancy(net, dec.plans)[1].values()) != dec.realized_congestion:
            bad.append(tag + " recount")
    ok = not bad
    record_criterion(7, ok, f"{len(decisions)} frame decisions, {len(bad)} exceed the zero-toll congestion")
    assert ok, bad


def test_criterion_08_popups(preset_runs):
    run = preset_runs["set1"]
    t0 = time.perf_counter()
    study = run_popup_study(run["cfg"], run["books"], ["none", "type1"], rate=0.1, reps=25, ctx=run["ctx"])
    elapsed = time.perf_counter() - t0
    below, not_lower = [], []
    for d in study["days"]:
        for s, blk in d["strategies"].items():
            for f in blk["frames"]:
                if f["median"] is None or f["median"] < f["baseline"]:
                    below.append((d["day"], s, f["frame"]))
        if not d["strategies"]["type1"]["day_totals"]["median"] < d["strategies"]["none"]["day_totals"]["median"]:
            not_lower.append(d["day"])
    medians = [(d["strategies"]["none"]["day_totals"]["median"], d["strategies"]["type1"]["day_totals"]["median"])
               for d in study["days"]]
    ok = not below and not not_lower and elapsed <= 3600.0
    record_criterion(8, ok, f"25 reps at 10 %: {len(below)} frames below baseline, day medians none/type1 "
                            f"{medians}, {elapsed / 60:.1f} min")
    assert ok, (below, not_lower)


# --- 9. aggregation arithmetic -------------------------------------------------------


def _dist(rng, m=8):
    p = rng.random(m) * (rng.random(m) < 0.8)
    if p.sum() == 0:
        p[0] = 1.0
    return p / p.sum()


def test_criterion_09_weights_and_metric():
    w = inverse_distance_weights([0.1, 0.2, 0.4], eps=1e-6)
    weights_ok = bool(np.all(np.abs(w - [0.5714, 0.2857, 0.1429]) <= 1e-3))
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(1000):
        p, q, r = _dist(rng), _dist(rng), _dist(rng)
        pq, qp = wasserstein_1d(p, q), wasserstein_1d(q, p)
        worst = max(worst, abs(pq - qp), wasserstein_1d(p, p),
                    pq - wasserstein_1d(p, r) - wasserstein_1d(r, q), -pq)
    ok = weights_ok and worst <= 1e-9
    record_criterion(9, ok, f"weights {np.round(w, 4).tolist()}, worst metric slack {worst:.2e}")
    assert ok


# --- 10. reproducibility -------------------------------------------------------------


def test_criterion_10_byte_identical(tmp_path):
    cfg = replace(load_scenario("ci"), name="ci-repro", historical_days=1, test_days=1, train_size=40,
                  epochs=50, n_candidates=4, replications=3)
    run_pipeline(cfg, tmp_path / "a")
    run_pipeline(cfg, tmp_path / "b")
    a, b = (tmp_path / "a" / "report.json").read_bytes(), (tmp_path / "b" / "report.json").read_bytes()
    ok = a == b
    record_criterion(10, ok, f"report.json {len(a)} bytes, identical={ok}")
    assert ok


# --- 3. separation audit, runs after everything else ---------------------------------


@pytest.mark.audit_last
def test_criterion_03_no_separation_violations():
    n, v = SEPARATION_AUDIT["instances"], SEPARATION_AUDIT["violations"]
    ok = n > 0 and not v
    record_criterion(3, ok, f"{n} solved schedules ({SEPARATION_AUDIT['plans']} flight plans), {len(v)} violations")
    assert ok, v[:5]
