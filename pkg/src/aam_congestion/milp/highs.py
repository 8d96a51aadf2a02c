"""HiGHS backend through :func:`scipy.optimize.milp`."""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp


def _matrix(model):
    rows, cols, vals = [], [], []
    lo = np.empty(model.num_constraints)
    hi = np.empty(model.num_constraints)
    for i, con in enumerate(model.constraints):
        for j, a in con.coefs.items():
            rows.append(i)
            cols.append(j)
            vals.append(a)
        lo[i] = -np.inf if con.sense == "<=" else con.rhs
        hi[i] = np.inf if con.sense == ">=" else con.rhs
    A = sparse.csr_array((vals, (rows, cols)), shape=(model.num_constraints, model.num_vars))
    return A, lo, hi


def solve_highs(model, time_limit: float = math.inf, node_limit: int | None = None, mip_gap: float = 1e-9,
                relax: bool = False, polish: bool = True):
    """Returns (status, objective, x, nodes, dual_bound)."""
    c = np.array(model.obj, dtype=float)
    lb = np.array(model.lb, dtype=float)
    ub = np.array(model.ub, dtype=float)
    integrality = np.zeros(model.num_vars) if relax else np.array(model.integer, dtype=float)
    options = {"mip_rel_gap": mip_gap, "presolve": True}
    if math.isfinite(time_limit):
        options["time_limit"] = float(time_limit)
    if node_limit is not None:
        options["node_limit"] = int(node_limit)
    constraints = ()
    if model.num_constraints:
        A, lo, hi = _matrix(model)
        constraints = (LinearConstraint(A, lo, hi),)
    res = milp(c, integrality=integrality, bounds=Bounds(lb, ub), constraints=constraints, options=options)
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    dual = getattr(res, "mip_dual_bound", None)
    if res.status == 2:
        return "infeasible", math.inf, None, nodes, math.inf
    if res.status == 3:
        return "unbounded", -math.inf, None, nodes, -math.inf
    if res.x is None:
        return "node-limit", math.inf, None, nodes, -math.inf if dual is None else dual + model.obj_offset
    x = np.asarray(res.x, dtype=float)
    ints = np.array(model.integer, dtype=bool) & (not relax)
    if ints.any():
        x[ints] = np.round(x[ints])
        if polish:
            x = _polish(model, x, ints)
    status = "optimal" if res.status == 0 else "node-limit"
    obj = float(c @ x) + model.obj_offset
    if dual is None or status == "optimal":
        dual = obj - model.obj_offset
    return status, obj, x, nodes, float(dual) + model.obj_offset


def _polish(model, x, ints):
    """Re-solve the continuous part with integers fixed, removing big-M leakage."""
    if ints.all() or not model.num_constraints:
        return x
    lb = np.array(model.lb, dtype=float)
    ub = np.array(model.ub, dtype=float)
    lb[ints] = ub[ints] = x[ints]
    A, lo, hi = _matrix(model)
    A = A.tocsr()
    eq = np.isclose(lo, hi)
    ub_rows = np.isfinite(hi) & ~eq
    lb_rows = np.isfinite(lo) & ~eq
    A_ub = sparse.vstack([A[ub_rows], -A[lb_rows]]) if (ub_rows.any() or lb_rows.any()) else None
    b_ub = np.concatenate([hi[ub_rows], -lo[lb_rows]]) if A_ub is not None else None
    res = linprog(
        np.array(model.obj, dtype=float),
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A[eq] if eq.any() else None,
        b_eq=lo[eq] if eq.any() else None,
        bounds=np.column_stack([lb, ub]),
        method="highs",
    )
    if res.status != 0:
        return x
    out = np.asarray(res.x, dtype=float)
    out[ints] = x[ints]
    return out
