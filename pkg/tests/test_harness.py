import json

import pytest

from aam_congestion import cli
from aam_congestion.aggregation import zero_strategy
from aam_congestion.harness import (
    Context,
    HistoricalRun,
    ScenarioConfig,
    build_strategies,
    load_scenario,
    reduction_pct,
    run_historical,
    run_pipeline,
    run_popup_study,
    run_test_days,
)

from conftest import network_doc

TOY_DEMAND = {
    "name": "toy",
    "noise_sigma": 0.05,
    "delay_cost": [0.4, 0.6],
    "profiles": {"flat": {"amplitude": 1.0, "baseline": 3.0, "peak_time": 1800}},
    "od_profiles": {"A->B": "flat", "B->A": "flat"},
}


def toy_files(tmp_path, frames=2):
    net = network_doc(
        paths=[("ab-core", "A", "B", 600, 10, [("SC", 0.0)]), ("ab-ring", "A", "B", 600, 16, [("SR", 0.0)]),
               ("ba-core", "B", "A", 600, 10, [("SC", 0.0)]), ("ba-ring", "B", "A", 600, 16, [("SR", 0.0)])],
        sectors=[("SC", 1), ("SR", None)],
        horizon_periods=4,
        frames_per_day=frames,
    )
    (tmp_path / "net.json").write_text(json.dumps(net))
    (tmp_path / "demand.json").write_text(json.dumps(TOY_DEMAND))
    doc = {
        "name": "toy", "network": "net.json", "demand": "demand.json", "historical_days": 2, "test_days": 2,
        "seed": 5, "n_paths": 2, "n_vertiports": 1, "toll_max": 30.0, "hidden": [8], "epochs": 20,
        "train_size": 16, "n_candidates": 4, "replications": 3, "follower_node_limit": 500,
    }
    (tmp_path / "scenario.json").write_text(json.dumps(doc))
    return tmp_path / "scenario.json"


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    path = toy_files(tmp_path_factory.mktemp("toy"))
    cfg = load_scenario(path)
    ctx = Context.build(cfg)
    hist = run_historical(cfg, ctx)
    return cfg, ctx, hist, build_strategies(cfg, hist, ctx)


def test_reduction_examples():
    assert round(reduction_pct(2158, 1438), 1) == 33.4
    assert round(reduction_pct(1720, 1013), 1) == 41.1
    assert round(reduction_pct(1720, 1025), 1) == 40.4
    assert reduction_pct(0, 0) == 0.0


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ScenarioConfig(replications=0)
    with pytest.raises(ValueError):
        ScenarioConfig(strategies=("none", "type3"))
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"bogus": 1})
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "missing.json")
    assert ScenarioConfig.from_dict(ScenarioConfig().to_dict()) == ScenarioConfig()


def test_bundled_scenarios_load():
    ci, default = load_scenario("ci"), load_scenario("default")
    assert default.hidden == (256, 128, 64) and default.train_size == 1000 and default.n_candidates == 64
    assert ci.hidden == (32, 16)


def test_single_frame_smoke(tmp_path):
    path = toy_files(tmp_path, frames=1)
    doc = json.loads(path.read_text())
    doc.update(historical_days=1, test_days=1)
    path.write_text(json.dumps(doc))
    cfg = load_scenario(path)
    ctx = Context.build(cfg)
    sched = ctx.historical_schedule(0)
    sched.frames[0] = sched.frames[0][:3]
    ctx.historical_schedule = lambda d: sched
    hist = run_historical(cfg, ctx)
    assert len(hist.outcomes) == 1 and len(hist.outcomes[0]) == 1
    assert hist.outcomes[0][0].flights == 3


def test_cardinality_and_serialization(toy):
    cfg, ctx, hist, books = toy
    assert len(hist.outcomes) == cfg.historical_days
    assert all(len(day) == ctx.net.time.llp_frames_per_day for day in hist.outcomes)
    assert sorted(books) == ["none", "type1", "type2/day0", "type2/day1"]
    back = HistoricalRun.from_dict(json.loads(json.dumps(hist.to_dict())))
    assert back.toll_history() == hist.toll_history() and back.histograms == hist.histograms


def test_historical_determinism(toy):
    cfg, ctx, hist, _ = toy
    again = run_historical(cfg, Context.build(cfg))
    assert json.dumps(again.to_dict(), sort_keys=True) == json.dumps(hist.to_dict(), sort_keys=True)


def test_zero_book_matches_unmanaged_and_totals_add_up(toy):
    cfg, ctx, _, books = toy
    fake = dict(books)
    fake["type1"] = zero_strategy(ctx.space, ctx.net.time.llp_frames_per_day)
    res = run_test_days(cfg, fake, ["none", "type1"], ctx)
    for d in res["days"]:
        assert d["totals"]["type1"] == d["totals"]["none"]
        assert d["reductions"]["type1"] == 0.0
    full = run_test_days(cfg, books, ctx=ctx)
    alone = run_test_days(cfg, books, ["none"], ctx)
    for d, a in zip(full["days"], alone["days"]):
        assert d["totals"]["none"] == a["totals"]["none"]
        for s, total in d["totals"].items():
            assert total == sum(d["frames"][s])
            if s != "none":
                assert abs(d["reductions"][s] - reduction_pct(d["totals"]["none"], total)) <= 0.05 + 1e-9


def test_book_missing_frames_rejected(toy):
    cfg, ctx, _, books = toy
    short = dict(books)
    short["none"] = zero_strategy(ctx.space, 1)
    with pytest.raises(ValueError, match="frames"):
        run_test_days(cfg, short, ["none"], ctx)


def test_popup_rate_zero_equals_baseline(toy):
    cfg, ctx, _, books = toy
    res = run_popup_study(cfg, books, ["none", "type1"], rate=0.0, reps=3, ctx=ctx)
    for d in res["days"]:
        for blk in d["strategies"].values():
            for f in blk["frames"]:
                assert f["min"] == f["max"] == f["baseline"] and f["n_valid"] == 3
    with pytest.raises(ValueError):
        run_popup_study(cfg, books, rate=1.5, ctx=ctx)
    with pytest.raises(ValueError):
        run_popup_study(cfg, books, reps=0, ctx=ctx)


def test_pipeline_report_is_byte_identical(tmp_path):
    cfg = load_scenario(toy_files(tmp_path))
    run_pipeline(cfg, tmp_path / "a")
    run_pipeline(cfg, tmp_path / "b")
    for name in ("report.json", "tables.csv", "boxplot_data.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert {"scenario", "historical", "approximation", "test_days", "popups"} <= set(report)
    header = (tmp_path / "a" / "tables.csv").read_text().splitlines()[0]
    assert header == "table,day,frame,strategy,metric,value"


def test_cli_verbs_end_to_end(tmp_path, capsys):
    config = toy_files(tmp_path)
    out = tmp_path / "results"
    common = ["--out", str(out)]
    assert cli.main(["simulate-historical", "--config", str(config), *common]) == 0
    assert cli.main(["aggregate", "--strategy", "all", *common]) == 0
    assert cli.main(["run-tests", *common]) == 0
    assert cli.main(["popup-study", "--popup-rate", "0.2", "--reps", "2", *common]) == 0
    assert cli.main(["report", *common]) == 0
    for name in ("scenario.json", "historical.json", "strategies.json", "tests.json", "popups.json",
                 "report.json", "tables.csv", "boxplot_data.csv"):
        assert (out / name).exists(), name
    pops = json.loads((out / "popups.json").read_text())
    assert pops["rate"] == 0.2 and pops["replications"] == 2
    text = capsys.readouterr().out
    assert "test day 0" in text and "report written" in text
    # a single strategy keeps the unmanaged row for the reductions
    assert cli.main(["run-tests", "--strategy", "type1", *common]) == 0
    assert sorted(json.loads((out / "tests.json").read_text())["days"][0]["totals"]) == ["none", "type1"]


def test_cli_errors(tmp_path, capsys):
    assert cli.main(["simulate-historical", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["aggregate", "--out", str(tmp_path / "empty")])
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
