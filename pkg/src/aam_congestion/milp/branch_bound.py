"""LP-based branch and bound over the dense simplex."""

from __future__ import annotations

import heapq
import math
import time

import numpy as np

from .simplex import solve_lp

INT_TOL = 1e-6


def _prunable(bound: float, best: float) -> bool:
    return math.isfinite(best) and bound >= best - 1e-9 * max(1.0, abs(best))


def _polish(c, A, senses, b, lb, ub, x, int_idx):
    """Round the integers and re-solve the continuous part; None if that is infeasible."""
    xr = x.copy()
    xr[int_idx] = np.round(xr[int_idx])
    if int_idx.size == 0 or int_idx.size == len(x):
        return xr
    lo, hi = lb.copy(), ub.copy()
    lo[int_idx] = hi[int_idx] = xr[int_idx]
    res = solve_lp(c, A, senses, b, lo, hi)
    if res.status != "optimal":
        return None
    out = res.x.copy()
    out[int_idx] = xr[int_idx]
    return out


def branch_and_bound(model, node_limit: int = 100000, time_limit: float = math.inf, relax: bool = False):
    """Best-bound search; branches on the most fractional variable (lowest id on ties).

    Returns (status, objective, x, nodes, dual_bound, root_bound).
    """
    c, A, senses, b, lb0, ub0, ints = model.arrays()
    if relax:
        ints = np.zeros_like(ints)
    int_idx = np.flatnonzero(ints)
    # integer variables get integral bounds up front
    lb0 = lb0.copy()
    ub0 = ub0.copy()
    lb0[int_idx] = np.ceil(lb0[int_idx] - INT_TOL)
    ub0[int_idx] = np.floor(ub0[int_idx] + INT_TOL)

    start = time.perf_counter()
    incumbent, best = None, math.inf
    counter = 0
    root = solve_lp(c, A, senses, b, lb0, ub0)
    if root.status == "unbounded":
        return "unbounded", -math.inf, None, 1, -math.inf, -math.inf
    if root.status != "optimal":
        return "infeasible", math.inf, None, 1, math.inf, math.inf
    root_bound = root.objective
    heap = [(root.objective, counter, lb0, ub0, root.x)]
    nodes = 1
    dual_bound = root.objective

    while heap:
        bound, _, lb, ub, x = heapq.heappop(heap)
        dual_bound = bound
        if _prunable(bound, best):
            heap.clear()
            break
        frac = np.abs(x[int_idx] - np.round(x[int_idx])) if int_idx.size else np.array([])
        if frac.size == 0 or frac.max() <= INT_TOL:
            xr = _polish(c, A, senses, b, lb, ub, x, int_idx)
            if xr is not None:
                if float(c @ xr) < best:
                    incumbent, best = xr, float(c @ xr)
                continue
            if frac.max() == 0.0:
                continue
            # near-integral only thanks to big-M leakage: keep branching
        if nodes >= node_limit or time.perf_counter() - start > time_limit:
            status = "node-limit"
            dual_bound = min([bound] + [item[0] for item in heap])
            obj = best + model.obj_offset if incumbent is not None else math.inf
            return status, obj, incumbent, nodes, dual_bound + model.obj_offset, root_bound + model.obj_offset
        # most fractional: distance to nearest integer closest to 0.5
        score = np.abs(frac - 0.5)
        k = int(np.flatnonzero(score <= score.min() + 1e-12)[0])
        j = int(int_idx[k])
        v = x[j]
        for lo_j, hi_j in ((lb[j], math.floor(v)), (math.ceil(v), ub[j])):
            if lo_j > hi_j:
                continue
            lb2, ub2 = lb.copy(), ub.copy()
            lb2[j], ub2[j] = lo_j, hi_j
            res = solve_lp(c, A, senses, b, lb2, ub2)
            nodes += 1
            if res.status != "optimal":
                continue
            if not _prunable(res.objective, best):
                counter += 1
                heapq.heappush(heap, (res.objective, counter, lb2, ub2, res.x))

    if incumbent is None:
        return "infeasible", math.inf, None, nodes, math.inf, root_bound + model.obj_offset
    return "optimal", best + model.obj_offset, incumbent, nodes, best + model.obj_offset, root_bound + model.obj_offset
