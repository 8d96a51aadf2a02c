"""Mixed-integer linear program container and modelling helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

SENSES = ("<=", ">=", "==")


class ModelError(ValueError):
    pass


@dataclass
class Constraint:
    coefs: dict[int, float]
    sense: str
    rhs: float
    name: str = ""


@dataclass
class MilpModel:
    """min c'x + offset  s.t.  rows (<=, >=, ==),  lb <= x <= ub,  x_j integer for flagged j."""

    name: str = ""
    var_names: list[str] = field(default_factory=list)
    lb: list[float] = field(default_factory=list)
    ub: list[float] = field(default_factory=list)
    integer: list[bool] = field(default_factory=list)
    obj: list[float] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    obj_offset: float = 0.0

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, integer: bool = False, obj: float = 0.0) -> int:
        if lb > ub:
            raise ModelError(f"variable {name!r}: lower bound {lb} exceeds upper bound {ub}")
        self.var_names.append(name)
        self.lb.append(float(lb))
        self.ub.append(float(ub))
        self.integer.append(bool(integer))
        self.obj.append(float(obj))
        return len(self.var_names) - 1

    def add_binary(self, name: str, obj: float = 0.0) -> int:
        return self.add_var(name, 0.0, 1.0, integer=True, obj=obj)

    def add_constraint(self, coefs: Mapping[int, float], sense: str, rhs: float, name: str = "") -> int:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        clean: dict[int, float] = {}
        for j, a in coefs.items():
            if not 0 <= j < self.num_vars:
                raise ModelError(f"constraint {name!r} references undeclared variable {j}")
            if a != 0.0:
                clean[j] = clean.get(j, 0.0) + float(a)
        self.constraints.append(Constraint(clean, sense, float(rhs), name))
        return len(self.constraints) - 1

    def set_bounds(self, j: int, lb: float, ub: float) -> None:
        if lb > ub:
            raise ModelError(f"variable {self.var_names[j]!r}: lower bound {lb} exceeds upper bound {ub}")
        self.lb[j], self.ub[j] = float(lb), float(ub)

    def expr_range(self, coefs: Mapping[int, float], const: float = 0.0) -> tuple[float, float]:
        """Min and max of ``coefs . x + const`` over the variable box."""
        lo = hi = const
        for j, a in coefs.items():
            if a > 0:
                lo += a * self.lb[j]
                hi += a * self.ub[j]
            elif a < 0:
                lo += a * self.ub[j]
                hi += a * self.lb[j]
        return lo, hi

    def copy(self) -> "MilpModel":
        return MilpModel(
            self.name,
            list(self.var_names),
            list(self.lb),
            list(self.ub),
            list(self.integer),
            list(self.obj),
            [Constraint(dict(c.coefs), c.sense, c.rhs, c.name) for c in self.constraints],
            self.obj_offset,
        )

    def check(self) -> None:
        for j, (lo, hi) in enumerate(zip(self.lb, self.ub)):
            if lo > hi:
                raise ModelError(f"variable {self.var_names[j]!r} has empty bounds")
        for c in self.constraints:
            if any(not 0 <= j < self.num_vars for j in c.coefs):
                raise ModelError(f"constraint {c.name!r} references undeclared variable")

    def arrays(self):
        """Dense (c, A, senses, b, lb, ub, integrality) view of the model."""
        n = self.num_vars
        A = np.zeros((self.num_constraints, n))
        for i, con in enumerate(self.constraints):
            for j, a in con.coefs.items():
                A[i, j] = a
        return (
            np.array(self.obj, dtype=float),
            A,
            [c.sense for c in self.constraints],
            np.array([c.rhs for c in self.constraints], dtype=float),
            np.array(self.lb, dtype=float),
            np.array(self.ub, dtype=float),
            np.array(self.integer, dtype=bool),
        )

    def violation(self, x, int_tol: float = 1e-6) -> float:
        """Largest constraint, bound or integrality violation of point ``x``."""
        x = np.asarray(x, dtype=float)
        worst = 0.0
        lb, ub = np.array(self.lb), np.array(self.ub)
        worst = max(worst, float(np.max(lb - x, initial=0.0)), float(np.max(x - ub, initial=0.0)))
        for c in self.constraints:
            lhs = sum(a * x[j] for j, a in c.coefs.items())
            if c.sense == "<=":
                worst = max(worst, lhs - c.rhs)
            elif c.sense == ">=":
                worst = max(worst, c.rhs - lhs)
            else:
                worst = max(worst, abs(lhs - c.rhs))
        ints = np.array(self.integer, dtype=bool)
        if ints.any():
            frac = np.abs(x[ints] - np.round(x[ints]))
            if frac.max() > int_tol:
                worst = max(worst, float(frac.max()))
        return worst

    def objective_value(self, x) -> float:
        return float(np.dot(self.obj, x)) + self.obj_offset

    def to_lp_text(self) -> str:
        """Plain-text dump in a CPLEX-LP-like layout, for cross-checking elsewhere."""

        def term(a, j):
            return f"{'-' if a < 0 else '+'} {abs(a):.12g} {self.var_names[j]}"

        lines = [f"\\ {self.name}" if self.name else "\\ model", "Minimize", " obj: " + " ".join(
            term(a, j) for j, a in enumerate(self.obj) if a != 0.0
        ) + (f" + {self.obj_offset:.12g}" if self.obj_offset else ""), "Subject To"]
        for i, c in enumerate(self.constraints):
            op = {"<=": "<=", ">=": ">=", "==": "="}[c.sense]
            body = " ".join(term(a, j) for j, a in sorted(c.coefs.items())) or "0"
            lines.append(f" {c.name or f'c{i}'}: {body} {op} {c.rhs:.12g}")
        lines.append("Bounds")
        for j, name in enumerate(self.var_names):
            lo = "-inf" if math.isinf(self.lb[j]) else f"{self.lb[j]:.12g}"
            hi = "+inf" if math.isinf(self.ub[j]) else f"{self.ub[j]:.12g}"
            lines.append(f" {lo} <= {name} <= {hi}")
        ints = [self.var_names[j] for j in range(self.num_vars) if self.integer[j]]
        if ints:
            lines.append("General")
            lines.append(" " + " ".join(ints))
        lines.append("End")
        return "\n".join(lines) + "\n"


def add_big_m_indicator(
    model: MilpModel,
    guard: int,
    expr: Mapping[int, float],
    sense: str,
    big_m: float | None = None,
    const: float = 0.0,
    name: str = "",
) -> list[int]:
    """Encode ``guard = 1  =>  expr + const (sense) 0`` with big-M rows.

    ``big_m`` defaults to the tightest value derived from the variable box and
    is rejected when smaller than that value. ``==`` produces two rows. A row
    that the box already satisfies for either guard value is not emitted.
    """
    if model.integer[guard] is False or model.lb[guard] < 0 or model.ub[guard] > 1:
        raise ModelError(f"guard {model.var_names[guard]!r} must be a binary variable")
    if sense not in SENSES:
        raise ModelError(f"unknown sense {sense!r}")
    if guard in expr:
        raise ModelError("guard may not appear in the guarded expression")
    lo, hi = model.expr_range(expr, const)
    ids = []
    for s in ((("<=", ">=") if sense == "==" else (sense,))):
        need = max(hi, 0.0) if s == "<=" else max(-lo, 0.0)
        if math.isinf(need):
            raise ModelError(f"indicator {name!r}: expression is unbounded over the variable box")
        m = need if big_m is None else float(big_m)
        if m < need - 1e-9 * max(1.0, need):
            raise ModelError(f"indicator {name!r}: big-M {m} below the box bound {need}")
        if need <= 0.0:
            continue
        coefs = dict(expr)
        if s == "<=":
            # expr + const <= M (1 - g)
            coefs[guard] = coefs.get(guard, 0.0) + m
            ids.append(model.add_constraint(coefs, "<=", m - const, name))
        else:
            # expr + const >= -M (1 - g)
            coefs[guard] = coefs.get(guard, 0.0) - m
            ids.append(model.add_constraint(coefs, ">=", -m - const, name))
    return ids


def add_disjunction(
    model: MilpModel,
    first: Mapping[int, float],
    second: Mapping[int, float],
    gap: float,
    name: str = "",
) -> int | None:
    """Require ``first - second >= gap`` or ``second - first >= gap``.

    Returns the selector binary (1 selects the first ordering), or ``None``
    when the box already decides the ordering and no binary is needed.
    """
    diff = dict(first)
    for j, a in second.items():
        diff[j] = diff.get(j, 0.0) - a
    lo, hi = model.expr_range(diff)
    if lo >= gap:
        return None
    if hi <= -gap:
        return None
    if hi < gap:
        model.add_constraint(diff, "<=", -gap, name)
        return None
    if lo > -gap:
        model.add_constraint(diff, ">=", gap, name)
        return None
    y = model.add_binary(f"{name}:order" if name else f"y{model.num_vars}")
    add_big_m_indicator(model, y, diff, ">=", const=-gap, name=name)
    neg = {j: -a for j, a in diff.items()}
    # y = 0 => second - first >= gap, written as an indicator on (1 - y)
    lo2, hi2 = model.expr_range(neg, -gap)
    m = max(-lo2, 0.0)
    coefs = dict(neg)
    coefs[y] = coefs.get(y, 0.0) + m
    model.add_constraint(coefs, ">=", gap, name)
    return y
