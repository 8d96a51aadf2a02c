"""Neural value-function surrogate for the LLP optimum.

A small ReLU MLP maps a toll vector to the follower's optimal cost. It is
trained by plain mini-batch SGD on z-scored inputs and targets.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .demand import DemandParams, FlightRequest, expected_od_demand
from .llp import LlpConfig, LlpInfeasible, TollSpace, solve_llp
from .network import NetworkModel

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SurrogateConfig:
    input_dim: int = 8
    hidden: tuple[int, ...] = (256, 128, 64)
    lr: float = 0.01
    epochs: int = 500
    train_size: int = 1000
    toll_max: float = 100.0
    batch_size: int = 32
    divergence_factor: float = 10.0

    def __post_init__(self):
        if self.input_dim <= 0 or self.epochs <= 0 or self.train_size <= 0 or self.batch_size <= 0:
            raise ValueError("surrogate sizes must be positive")
        if any(h <= 0 for h in self.hidden):
            raise ValueError("hidden layer sizes must be positive")
        if self.toll_max < 0:
            raise ValueError("toll_max must be non-negative")

    @classmethod
    def desk(cls, input_dim: int = 8, **kw) -> "SurrogateConfig":
        """Small network for quick runs and CI."""
        return cls(input_dim=input_dim, hidden=(32, 16), **kw)


# --- MLP ---------------------------------------------------------------------


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    """He-initialised weights, zero biases."""
    params = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        W = rng.normal(0.0, math.sqrt(2.0 / n_in), size=(n_in, n_out))
        params.append((W, np.zeros(n_out)))
    return params


def forward(params, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the output column and the per-layer activations (input first)."""
    acts = [X]
    h = X
    for k, (W, b) in enumerate(params):
        z = h @ W + b
        h = z if k == len(params) - 1 else np.maximum(z, 0.0)
        acts.append(h)
    return h[:, 0], acts


def loss_and_grad(params, X: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient with respect to every (W, b)."""
    pred, acts = forward(params, X)
    n = X.shape[0]
    err = pred - y
    loss = float(np.mean(err**2))
    grads = [None] * len(params)
    g = (2.0 / n) * err[:, None]
    for k in range(len(params) - 1, -1, -1):
        W, _ = params[k]
        h_in = acts[k]
        grads[k] = (h_in.T @ g, g.sum(axis=0))
        if k > 0:
            g = (g @ W.T) * (acts[k] > 0.0)
    return loss, grads


@dataclass
class TrainedSurrogate:
    params: list[tuple[np.ndarray, np.ndarray]]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    loss_trace: list[float] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.params[0][0].shape[0]

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else math.nan

    def normalize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.x_mean) / self.x_std

    def denormalize(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.x_std + self.x_mean

    def predict(self, x):
        """Predicted LLP optimum for one toll vector (float) or a batch (array)."""
        X = np.asarray(x, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} toll coordinates, got {X.shape[1]}")
        out, _ = forward(self.params, self.normalize(X))
        y = out * self.y_std + self.y_mean
        return float(y[0]) if single else y

    def to_dict(self) -> dict:
        return {
            "layers": [{"shape": list(W.shape), "weights": W.ravel().tolist(), "bias": b.tolist()} for W, b in self.params],
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "loss_trace": list(self.loss_trace),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrainedSurrogate":
        params = [
            (np.array(layer["weights"], dtype=float).reshape(layer["shape"]), np.array(layer["bias"], dtype=float))
            for layer in doc["layers"]
        ]
        return cls(params, np.array(doc["x_mean"]), np.array(doc["x_std"]), float(doc["y_mean"]),
                   float(doc["y_std"]), list(doc.get("loss_trace", [])))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TrainedSurrogate":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --- data --------------------------------------------------------------------


@dataclass
class SurrogateDataset:
    X: np.ndarray
    y: np.ndarray
    labels: list[str] = field(default_factory=list)
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.y)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow((self.labels or [f"x{i}" for i in range(self.X.shape[1])]) + ["phi"])
            for row, v in zip(self.X, self.y):
                w.writerow([f"{a:.6f}" for a in row] + [f"{v:.6f}"])

    @classmethod
    def concat(cls, parts: Sequence["SurrogateDataset"]) -> "SurrogateDataset":
        return cls(np.vstack([p.X for p in parts]), np.concatenate([p.y for p in parts]),
                   parts[0].labels, sum(p.skipped for p in parts))


def _label(args):
    net, flights, space, x, llp_config = args
    try:
        return solve_llp(net, flights, space.to_tolls(x), config=llp_config).objective
    except LlpInfeasible:
        return None


def generate_dataset(net: NetworkModel, flights: Sequence[FlightRequest], cfg: SurrogateConfig, seed: int,
                     space: TollSpace, llp_config: LlpConfig | None = None, size: int | None = None,
                     jobs: int = 1) -> SurrogateDataset:
    """Uniform toll vectors over the box, each labelled with the exact LLP optimum."""
    if space.dim != cfg.input_dim:
        raise ValueError(f"toll space has {space.dim} coordinates, surrogate expects {cfg.input_dim}")
    n = cfg.train_size if size is None else size
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.0, cfg.toll_max, size=(n, cfg.input_dim))
    tasks = [(net, list(flights), space, x, llp_config) for x in X]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            labels = list(pool.map(_label, tasks))
    else:
        labels = [_label(t) for t in tasks]
    keep = [i for i, v in enumerate(labels) if v is not None]
    skipped = n - len(keep)
    if skipped:
        log.warning("skipped %d infeasible LLP samples", skipped)
    return SurrogateDataset(X[keep], np.array([labels[i] for i in keep], dtype=float), space.labels(), skipped)


def _zscore(a: np.ndarray, axis=0):
    mean = a.mean(axis=axis)
    std = a.std(axis=axis)
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std


def train(dataset: SurrogateDataset, cfg: SurrogateConfig, seed: int) -> TrainedSurrogate:
    """Mini-batch SGD on the mean squared error of z-scored targets."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    X = np.asarray(dataset.X, dtype=float)
    y = np.asarray(dataset.y, dtype=float)
    if X.shape[1] != cfg.input_dim:
        raise ValueError(f"dataset has {X.shape[1]} inputs, config expects {cfg.input_dim}")
    rng = np.random.default_rng(seed)
    x_mean, x_std = _zscore(X)
    y_mean, y_std = (float(v) for v in _zscore(y))
    Xn = (X - x_mean) / x_std
    yn = (y - y_mean) / y_std
    params = init_params([cfg.input_dim, *cfg.hidden, 1], rng)
    initial, _ = loss_and_grad(params, Xn, yn)
    trace = [initial]
    limit = cfg.divergence_factor * max(initial, 1e-12)
    n = len(yn)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            _, grads = loss_and_grad(params, Xn[idx], yn[idx])
            params = [(W - cfg.lr * gW, b - cfg.lr * gb) for (W, b), (gW, gb) in zip(params, grads)]
        loss, _ = loss_and_grad(params, Xn, yn)
        trace.append(loss)
        if not math.isfinite(loss) or loss > limit:
            raise TrainingDiverged(f"training diverged at epoch {epoch}: loss {loss:.4g} vs initial {initial:.4g}", trace)
    return TrainedSurrogate(params, x_mean, x_std, y_mean, y_std, trace)


def approx_ratio(surrogate, tolls, phi_true: float) -> float:
    """Relative error |phi_hat - phi| / phi of the surrogate at ``tolls``."""
    if not phi_true > 0:
        raise ValueError(f"approximation ratio undefined for phi <= 0 (got {phi_true})")
    return abs(float(surrogate.predict(tolls)) - phi_true) / phi_true


# --- toll-space selection ------------------------------------------------------


def path_demand(net: NetworkModel, od_demand: Mapping[tuple[str, str], float]) -> dict[str, float]:
    """Expected flights per path when every OD pair uses its cheapest untolled path."""
    out = {pid: 0.0 for pid in net.paths}
    for od, q in od_demand.items():
        if od not in net.paths_by_od:
            continue
        best = min(net.paths_by_od[od], key=lambda p: (net.paths[p].base_cost, p))
        out[best] += q
    return out


def restricted_toll_space(net: NetworkModel, demand: DemandParams | Mapping[tuple[str, str], float],
                          n_paths: int = 5, n_vertiports: int = 3, bins: int = 1,
                          cap: float = 100.0) -> TollSpace:
    """Toll only the busiest paths and vertiports (highest expected demand)."""
    od_demand = expected_od_demand(demand) if isinstance(demand, DemandParams) else dict(demand)
    per_path = path_demand(net, od_demand)
    paths = sorted(per_path, key=lambda p: (-per_path[p], p))[:n_paths]
    per_vertiport = {v: 0.0 for v in net.vertiports}
    for (o, d), q in od_demand.items():
        per_vertiport[o] += q
        per_vertiport[d] += q
    verts = sorted(per_vertiport, key=lambda v: (-per_vertiport[v], v))[:n_vertiports]
    return TollSpace(tuple(paths), tuple(verts), net.time.horizon_periods, bins, cap)


def full_toll_space(net: NetworkModel, cap: float = 100.0, bin_seconds: int = 3600) -> TollSpace:
    """Every path plus one landing toll per vertiport per ``bin_seconds`` of the frame."""
    bins = max(1, int(round(net.time.horizon_seconds / bin_seconds)))
    return TollSpace(tuple(sorted(net.paths)), tuple(sorted(net.vertiports)), net.time.horizon_periods, bins, cap)
