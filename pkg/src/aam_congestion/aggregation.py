"""Turning per-day toll decisions into one deployable strategy.

Type 1 averages each frame's historical tolls. Type 2 weights each historical
day by the inverse Wasserstein distance between its demand profile and the
profile expected on the day the strategy is deployed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .llp import TollSpace, TollVector

WEIGHT_SUM_TOL = 1e-10


@dataclass
class StrategyBook:
    """One toll vector (in flat toll-space coordinates) per frame of the day."""

    space: TollSpace
    frames: list[list[float]]
    days: list[str] = field(default_factory=list)
    weights: list[float] = field(default_factory=list)
    kind: str = "type1"

    def __post_init__(self):
        for m, x in enumerate(self.frames):
            if len(x) != self.space.dim:
                raise ValueError(f"frame {m} has {len(x)} tolls, expected {self.space.dim}")
            if any(v < -1e-9 or v > self.space.cap + 1e-9 for v in x):
                raise ValueError(f"frame {m} tolls outside [0, {self.space.cap}]")
        if self.weights and abs(sum(self.weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("aggregation weights must sum to 1")

    def tolls(self, frame: int) -> TollVector:
        if not 0 <= frame < len(self.frames):
            raise KeyError(f"strategy book has no frame {frame}")
        return self.space.to_tolls(self.frames[frame])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "space": {
                "tolled_paths": list(self.space.tolled_paths),
                "tolled_vertiports": list(self.space.tolled_vertiports),
                "horizon_periods": self.space.horizon_periods,
                "bins": self.space.bins,
                "cap": self.space.cap,
            },
            "frames": [[round(float(v), 6) for v in x] for x in self.frames],
            "days": list(self.days),
            "weights": [float(w) for w in self.weights],
        }

    @classmethod
    def from_dict(cls, doc) -> "StrategyBook":
        sp = doc["space"]
        space = TollSpace(tuple(sp["tolled_paths"]), tuple(sp["tolled_vertiports"]), int(sp["horizon_periods"]),
                          int(sp.get("bins", 1)), float(sp.get("cap", 100.0)))
        return cls(space, [list(map(float, x)) for x in doc["frames"]], list(doc.get("days", [])),
                   list(doc.get("weights", [])), doc.get("kind", "type1"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "StrategyBook":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def zero_strategy(space: TollSpace, frames: int) -> StrategyBook:
    return StrategyBook(space, [[0.0] * space.dim for _ in range(frames)], kind="none")


def _history_array(history: Sequence[Sequence[Sequence[float]]]) -> np.ndarray:
    if len(history) == 0:
        raise ValueError("aggregation needs at least one historical day")
    counts = {len(day) for day in history}
    if len(counts) != 1:
        raise ValueError(f"historical days disagree on the number of frames: {sorted(counts)}")
    return np.asarray(history, dtype=float)  # (days, frames, dim)


def aggregate_naive(history, space: TollSpace, days: Sequence[str] = ()) -> StrategyBook:
    """Per-frame componentwise mean of the historical toll vectors."""
    H = _history_array(history)
    n = H.shape[0]
    return StrategyBook(space, H.mean(axis=0).tolist(), list(days), [1.0 / n] * n, "type1")


def wasserstein_1d(p, q, tol: float = 1e-9) -> float:
    """W1 distance between two distributions on unit-spaced ordered support."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("distributions must share the same one-dimensional support")
    for name, v in (("P", p), ("Q", q)):
        if np.any(v < -tol) or abs(v.sum() - 1.0) > tol:
            raise ValueError(f"{name} is not a normalized distribution (sum {v.sum():.12g})")
    return float(np.abs(np.cumsum(p) - np.cumsum(q)).sum())


def inverse_distance_weights(distances, eps: float = 1e-6) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ValueError("no distances to weight")
    if not eps > 0:
        raise ValueError("smoothing eps must be positive")
    if np.any(d < 0):
        raise ValueError("distances must be non-negative")
    inv = 1.0 / (d + eps)
    return inv / inv.sum()


def aggregate_weighted(history, hist_demands, test_demand, space: TollSpace, eps: float = 1e-6,
                       days: Sequence[str] = ()) -> StrategyBook:
    """Inverse-Wasserstein weighted per-frame average of historical tolls."""
    H = _history_array(history)
    if len(hist_demands) != H.shape[0]:
        raise ValueError("history and demand profiles are not aligned")
    dist = [wasserstein_1d(test_demand, h) for h in hist_demands]
    w = inverse_distance_weights(dist, eps)
    frames = np.tensordot(w, H, axes=1)
    # guard the convex-hull property against rounding
    frames = np.clip(frames, H.min(axis=0), H.max(axis=0))
    return StrategyBook(space, frames.tolist(), list(days), w.tolist(), "type2")
