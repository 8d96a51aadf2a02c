"""Self-contained MILP modelling layer with a native and a HiGHS backend."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .branch_bound import branch_and_bound
from .highs import solve_highs
from .model import MilpModel, ModelError, add_big_m_indicator, add_disjunction
from .simplex import solve_lp

FEASIBILITY_TOL = 1e-7
INTEGRALITY_TOL = 1e-6


@dataclass(frozen=True)
class SolveLimits:
    node_limit: int = 200000
    time_limit: float = math.inf
    mip_gap: float = 1e-9


@dataclass
class MilpSolution:
    status: str  # optimal | infeasible | unbounded | node-limit
    objective: float
    x: np.ndarray | None
    nodes: int = 0
    wall_time: float = 0.0
    dual_bound: float = math.nan
    root_bound: float = math.nan
    backend: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def has_solution(self) -> bool:
        return self.x is not None

    def value(self, j: int) -> float:
        return float(self.x[j])


def solve(model: MilpModel, limits: SolveLimits | None = None, backend: str = "highs",
          relax: bool = False) -> MilpSolution:
    """Minimise ``model``. ``backend`` is ``"native"`` (simplex + branch and bound) or ``"highs"``."""
    limits = limits or SolveLimits()
    model.check()
    start = time.perf_counter()
    if model.num_vars == 0:
        return MilpSolution("optimal", model.obj_offset, np.zeros(0), 0, 0.0, model.obj_offset, model.obj_offset, backend)
    if backend == "native":
        status, obj, x, nodes, dual, root = branch_and_bound(model, limits.node_limit, limits.time_limit, relax)
    elif backend == "highs":
        status, obj, x, nodes, dual = solve_highs(
            model, limits.time_limit, limits.node_limit, limits.mip_gap, relax=relax
        )
        root = math.nan
    else:
        raise ValueError(f"unknown backend {backend!r}")
    return MilpSolution(status, obj, x, nodes, time.perf_counter() - start, dual, root, backend)


__all__ = [
    "MilpModel",
    "MilpSolution",
    "ModelError",
    "SolveLimits",
    "add_big_m_indicator",
    "add_disjunction",
    "solve",
    "solve_lp",
]
