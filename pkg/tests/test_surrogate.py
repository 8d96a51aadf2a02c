import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aam_congestion.demand import FlightRequest, load_demand_preset
from aam_congestion.llp import LlpConfig, TollSpace, solve_llp
from aam_congestion.surrogate import (
    SurrogateConfig,
    SurrogateDataset,
    TrainedSurrogate,
    TrainingDiverged,
    approx_ratio,
    full_toll_space,
    generate_dataset,
    init_params,
    loss_and_grad,
    restricted_toll_space,
    train,
)

from conftest import two_path_network


class Fixed:
    def __init__(self, v):
        self.v = v

    def predict(self, x):
        return self.v


def test_approx_ratio_examples():
    assert approx_ratio(Fixed(7.0), [0.0], 7.0) == 0.0
    # the printed 0.66 % is the exact 35 / 5228 truncated to two decimals
    r = approx_ratio(Fixed(5263.0), [0.0], 5228.0)
    assert r == pytest.approx(35 / 5228, abs=1e-15)
    assert r == pytest.approx(0.0066, abs=1e-4)
    assert approx_ratio(Fixed(3208.0), [0.0], 5252.0) == pytest.approx(0.3892, abs=5e-5)
    with pytest.raises(ValueError):
        approx_ratio(Fixed(1.0), [0.0], 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SurrogateConfig(hidden=(16, 0))
    with pytest.raises(ValueError):
        SurrogateConfig(epochs=0)
    assert SurrogateConfig.desk(4).hidden == (32, 16)


# --- gradients -----------------------------------------------------------------------


def _flat_coords(params, rng, k):
    coords = []
    for li, (W, b) in enumerate(params):
        coords += [(li, 0, idx) for idx in np.ndindex(W.shape)]
        coords += [(li, 1, (j,)) for j in range(b.shape[0])]
    pick = rng.choice(len(coords), size=min(k, len(coords)), replace=False)
    return [coords[i] for i in pick]


@pytest.mark.parametrize("hidden", [(5,), (8, 6), (7, 5, 4)])
def test_gradient_matches_finite_differences(hidden):
    rng = np.random.default_rng(len(hidden))
    X = rng.normal(size=(12, 3))
    y = rng.normal(size=12)
    params = init_params([3, *hidden, 1], rng)
    # nudge biases so no unit sits on its ReLU kink
    params = [(W, b + 0.05) for W, b in params]
    _, grads = loss_and_grad(params, X, y)
    h = 1e-6
    for li, which, idx in _flat_coords(params, rng, 20):
        def loss_at(step):
            moved = [(W.copy(), b.copy()) for W, b in params]
            moved[li][which][idx] += step
            return loss_and_grad(moved, X, y)[0]

        fd = (loss_at(h) - loss_at(-h)) / (2 * h)
        an = grads[li][which][idx]
        assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd)), (li, which, idx)


def test_forward_shape_and_rejects_wrong_length():
    rng = np.random.default_rng(0)
    s = train(SurrogateDataset(rng.uniform(0, 10, (20, 3)), rng.uniform(0, 1, 20)),
              SurrogateConfig(input_dim=3, hidden=(4,), epochs=2, train_size=20), 0)
    assert isinstance(s.predict([1.0, 2.0, 3.0]), float)
    assert s.predict(np.ones((5, 3))).shape == (5,)
    with pytest.raises(ValueError):
        s.predict([1.0, 2.0])


# --- training ----------------------------------------------------------------------------


def test_constant_target_fit():
    rng = np.random.default_rng(1)
    X = rng.uniform(0, 100, (64, 4))
    ds = SurrogateDataset(X, np.full(64, 4321.0))
    s = train(ds, SurrogateConfig(input_dim=4, hidden=(16, 8), epochs=50, train_size=64), 3)
    pred = s.predict(rng.uniform(0, 100, (10, 4)))
    assert np.all(np.abs(pred - 4321.0) <= 0.01 * 4321.0)


def test_linear_target_recovery():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 100, (400, 4))
    y = 2 * X.sum(axis=1) + 7
    s = train(SurrogateDataset(X, y), SurrogateConfig(input_dim=4, hidden=(32, 16), epochs=200, train_size=400), 5)
    Xt = rng.uniform(0, 100, (100, 4))
    yt = 2 * Xt.sum(axis=1) + 7
    err = np.abs(s.predict(Xt) - yt) / yt
    assert err.mean() < 0.02


def test_training_deterministic_and_loss_trace():
    rng = np.random.default_rng(4)
    ds = SurrogateDataset(rng.uniform(0, 10, (40, 2)), rng.uniform(0, 5, 40))
    cfg = SurrogateConfig(input_dim=2, hidden=(6,), epochs=20, train_size=40)
    a, b = train(ds, cfg, 9), train(ds, cfg, 9)
    assert a.loss_trace == b.loss_trace and len(a.loss_trace) == 21
    assert a.final_loss < a.loss_trace[0]
    for (Wa, ba), (Wb, bb) in zip(a.params, b.params):
        assert np.array_equal(Wa, Wb) and np.array_equal(ba, bb)


def test_divergence_aborts_with_trace():
    rng = np.random.default_rng(5)
    ds = SurrogateDataset(rng.uniform(0, 10, (40, 3)), rng.normal(size=40))
    with pytest.raises(TrainingDiverged) as info:
        train(ds, SurrogateConfig(input_dim=3, hidden=(16,), lr=50.0, epochs=30, train_size=40), 0)
    assert len(info.value.trace) >= 2
    with pytest.raises(ValueError):
        train(SurrogateDataset(np.zeros((0, 3)), np.zeros(0)), SurrogateConfig(input_dim=3), 0)


def test_json_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    s = train(SurrogateDataset(rng.uniform(0, 10, (30, 3)), rng.uniform(0, 5, 30)),
              SurrogateConfig(input_dim=3, hidden=(5, 4), epochs=3, train_size=30), 0)
    s.save(tmp_path / "s.json")
    t = TrainedSurrogate.load(tmp_path / "s.json")
    x = rng.uniform(0, 10, (7, 3))
    assert np.array_equal(s.predict(x), t.predict(x))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=3), st.integers(0, 1000))
def test_normalization_round_trip(x, seed):
    rng = np.random.default_rng(seed)
    s = TrainedSurrogate(init_params([3, 2, 1], rng), rng.uniform(-50, 50, 3), rng.uniform(0.1, 40, 3), 0.0, 1.0)
    np.testing.assert_allclose(s.denormalize(s.normalize(x)), x, atol=1e-10, rtol=0)


# --- datasets --------------------------------------------------------------------------


def _flights(n, o="A", d="B"):
    return [FlightRequest(f"f{i}", o, d, 60.0 * i, 0.3) for i in range(n)]


def test_dataset_zero_toll_label_and_determinism():
    net = two_path_network(cap_a=None)
    fl = _flights(3)
    space = TollSpace(("p-a", "p-b"), ("B",), net.time.horizon_periods, cap=0.0)
    cfg = SurrogateConfig(input_dim=3, toll_max=0.0, train_size=1)
    ds = generate_dataset(net, fl, cfg, 0, space)
    assert len(ds) == 1 and ds.y[0] == pytest.approx(solve_llp(net, fl).objective)
    cfg = SurrogateConfig(input_dim=3, train_size=6)
    space = TollSpace(("p-a", "p-b"), ("B",), net.time.horizon_periods)
    a, b = generate_dataset(net, fl, cfg, 4, space), generate_dataset(net, fl, cfg, 4, space)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)
    assert a.X.min() >= 0 and a.X.max() <= 100
    with pytest.raises(ValueError):
        generate_dataset(net, fl, SurrogateConfig(input_dim=5), 0, space)


def test_dataset_csv_has_label_column(tmp_path):
    net = two_path_network(cap_a=None)
    space = TollSpace(("p-a", "p-b"), ("B",), net.time.horizon_periods)
    ds = generate_dataset(net, _flights(2), SurrogateConfig(input_dim=3, train_size=4), 1, space)
    ds.to_csv(tmp_path / "d.csv")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "p-a,p-b,B@0,phi" and len(rows) == 5
    assert all(len(r.split(",")) == 4 for r in rows)


def test_labels_nondecreasing_along_ray(synthetic_net):
    from aam_congestion.harness import ScenarioConfig, Context

    ctx = Context.build(ScenarioConfig())
    flights = [f for f in ctx.historical_schedule(0).frames[3]][:10]
    rng = np.random.default_rng(8)
    direction = rng.uniform(0, 1, ctx.space.dim)
    direction /= direction.max()
    cfg = LlpConfig(max_delay=900.0)
    vals = [solve_llp(synthetic_net, flights, ctx.space.to_tolls(t * direction), config=cfg).objective
            for t in np.linspace(0, 100, 6)]
    assert all(b >= a - 1e-6 for a, b in zip(vals, vals[1:]))


def test_toll_space_dimensions(synthetic_net):
    demand = load_demand_preset("set1", synthetic_net)
    small = restricted_toll_space(synthetic_net, demand)
    assert small.dim == 8 and len(small.tolled_paths) == 5 and len(small.tolled_vertiports) == 3
    busy = {v.id for v in synthetic_net.vertiports.values() if v.busy}
    assert set(small.tolled_vertiports) == busy
    full = full_toll_space(synthetic_net)
    # every path plus seven vertiports times three hourly bins
    assert full.dim == len(synthetic_net.paths) + 7 * 3 == 147


def test_thousand_sample_dataset_shape(synthetic_net, tmp_path):
    space = restricted_toll_space(synthetic_net, load_demand_preset("set1", synthetic_net))
    o, d = synthetic_net.paths[space.tolled_paths[0]].origin, synthetic_net.paths[space.tolled_paths[0]].destination
    ds = generate_dataset(synthetic_net, _flights(2, o, d), SurrogateConfig(input_dim=8), 0, space)
    assert ds.X.shape == (1000, 8) and ds.y.shape == (1000,) and ds.skipped == 0
    ds.to_csv(tmp_path / "d.csv")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert len(rows) == 1001 and all(len(r.split(",")) == 9 for r in rows)
