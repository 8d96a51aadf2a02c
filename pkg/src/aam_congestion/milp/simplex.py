"""Bounded-variable primal simplex (dense, revised form).

Solves  min c'x  s.t.  A x (<=, >=, ==) b,  lb <= x <= ub.
Each row gets a slack with sign-restricted bounds so the working system is
[A | I] (x, s) = b. Nonbasic variables sit at a finite bound (or at zero when
free). Phase 1 adds artificials only for rows the starting point violates.
Dantzig pricing is used until a run of degenerate pivots is seen, after which
Bland's rule takes over for the rest of the phase.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-7
OPT_TOL = 1e-9
PIVOT_TOL = 1e-9
DEGENERATE_SWITCH = 30


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded | iteration-limit
    x: np.ndarray | None
    objective: float
    iterations: int


def _residual_tol(b) -> float:
    """Absolute feasibility tolerance with a round-off allowance for large right-hand sides.

    Deliberately not proportional to |b| at FEAS_TOL: big-M rows carry values
    in the thousands while modelled gaps (e.g. half-open periods) are 1e-3.
    """
    return FEAS_TOL + 1e-11 * float(np.abs(b).max(initial=0.0))


def _start_value(lo: float, hi: float) -> float:
    if np.isfinite(lo):
        return lo
    if np.isfinite(hi):
        return hi
    return 0.0


def _iterate(M, b, cost, lo, hi, x, basis, max_iter):
    """Run primal simplex from a primal-feasible basis. Mutates x and basis."""
    n = M.shape[1]
    nonbasic = np.ones(n, dtype=bool)
    nonbasic[basis] = False
    degenerate_run = 0
    bland = False
    for it in range(max_iter):
        B = M[:, basis]
        xn = np.where(nonbasic, x, 0.0)
        x[basis] = np.linalg.solve(B, b - M @ xn)
        y = np.linalg.solve(B.T, cost[basis])
        d = cost - M.T @ y

        can_up = nonbasic & (x < hi - FEAS_TOL) & (d < -OPT_TOL)
        can_down = nonbasic & (x > lo + FEAS_TOL) & (d > OPT_TOL)
        eligible = np.flatnonzero(can_up | can_down)
        if eligible.size == 0:
            return "optimal", it
        if bland:
            q = int(eligible[0])
        else:
            q = int(eligible[np.argmax(np.abs(d[eligible]))])
        direction = 1.0 if can_up[q] else -1.0

        alpha = np.linalg.solve(B, M[:, q])
        rate = -direction * alpha  # d x_B / dt
        step = hi[q] - lo[q]
        leave = -1
        for i in range(len(basis)):
            j = basis[i]
            if rate[i] < -PIVOT_TOL:
                t = (x[j] - lo[j]) / -rate[i]
            elif rate[i] > PIVOT_TOL:
                t = (hi[j] - x[j]) / rate[i]
            else:
                continue
            t = max(t, 0.0)
            if t < step - 1e-12 or (bland and t <= step + 1e-12 and leave >= 0 and j < basis[leave]):
                step, leave = t, i
        if not np.isfinite(step):
            return "unbounded", it

        degenerate_run = degenerate_run + 1 if step <= 1e-12 else 0
        if degenerate_run >= DEGENERATE_SWITCH:
            bland = True

        x[q] += direction * step
        if leave < 0:
            continue  # bound flip of the entering variable
        j = basis[leave]
        x[j] = lo[j] if rate[leave] < 0 else hi[j]
        basis[leave] = q
        nonbasic[q] = False
        nonbasic[j] = True
    return "iteration-limit", max_iter


def solve_lp(c, A, senses, b, lb, ub, max_iter: int = 20000) -> LpResult:
    c = np.asarray(c, dtype=float)
    A = np.asarray(A, dtype=float).reshape(-1, len(c))
    b = np.asarray(b, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    m, n = A.shape
    if np.any(lb > ub + FEAS_TOL):
        return LpResult("infeasible", None, np.inf, 0)
    if m == 0:
        x = np.empty(n)
        for j in range(n):
            if c[j] > 0:
                x[j] = lb[j]
            elif c[j] < 0:
                x[j] = ub[j]
            else:
                x[j] = _start_value(lb[j], ub[j])
        if not np.all(np.isfinite(x)):
            return LpResult("unbounded", None, -np.inf, 0)
        return LpResult("optimal", x, float(c @ x), 0)

    s_lo = np.array([0.0 if s in ("<=", "==") else -np.inf for s in senses])
    s_hi = np.array([0.0 if s in (">=", "==") else np.inf for s in senses])
    M = np.hstack([A, np.eye(m)])
    lo = np.concatenate([lb, s_lo])
    hi = np.concatenate([ub, s_hi])
    x = np.array([_start_value(lo[j], hi[j]) for j in range(n)] + [0.0] * m)
    slack = b - A @ x[:n]
    basis = list(range(n, n + m))
    x[n:] = slack

    bad = [i for i in range(m) if slack[i] < s_lo[i] - FEAS_TOL or slack[i] > s_hi[i] + FEAS_TOL]
    iterations = 0
    if bad:
        # Park violated slacks at their nearest bound and cover the residual
        # with a nonnegative artificial column.
        k = len(bad)
        art = np.zeros((m, k))
        for col, i in enumerate(bad):
            target = s_lo[i] if slack[i] < s_lo[i] else s_hi[i]
            x[n + i] = target
            art[i, col] = 1.0 if slack[i] - target > 0 else -1.0
        M1 = np.hstack([M, art])
        lo1 = np.concatenate([lo, np.zeros(k)])
        hi1 = np.concatenate([hi, np.full(k, np.inf)])
        x1 = np.concatenate([x, np.abs(slack[bad] - x[[n + i for i in bad]])])
        basis1 = list(basis)
        for col, i in enumerate(bad):
            basis1[i] = n + m + col
        cost1 = np.concatenate([np.zeros(n + m), np.ones(k)])
        status, it = _iterate(M1, b, cost1, lo1, hi1, x1, basis1, max_iter)
        iterations += it
        if status == "iteration-limit":
            return LpResult(status, None, np.nan, iterations)
        infeas = float(x1[n + m:].sum())
        if infeas > _residual_tol(b):
            return LpResult("infeasible", None, np.inf, iterations)
        # Artificials stay in the problem pinned to zero.
        hi1[n + m:] = 0.0
        cost2 = np.concatenate([c, np.zeros(m + k)])
        status, it = _iterate(M1, b, cost2, lo1, hi1, x1, basis1, max_iter)
        iterations += it
        x = x1[: n + m]
    else:
        cost2 = np.concatenate([c, np.zeros(m)])
        status, it = _iterate(M, b, cost2, lo, hi, x, basis, max_iter)
        iterations += it

    if status != "optimal":
        return LpResult(status, None, -np.inf if status == "unbounded" else np.nan, iterations)
    xs = x[:n].copy()
    # reject points that only look feasible through accumulated round-off
    r = b - A @ xs
    if np.any(r < s_lo - _residual_tol(b)) or np.any(r > s_hi + _residual_tol(b)):
        return LpResult("infeasible", None, np.inf, iterations)
    return LpResult("optimal", xs, float(c @ xs), iterations)
