"""Solver-agnostic convex quadratic program representation.

Programs hold a quadratic objective plus affine equalities, affine
inequalities and convex quadratic inequalities over a flat variable vector.
Quadratic forms are certified positive semidefinite when added (diagonal
nonneg fast path, eigenvalue check otherwise), so anything that builds is
convex by construction.  Solving goes through cvxpy; the backend is a
parameter and results are re-checked against the stored constraints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

PSD_TOL = 1e-9


class ProgramError(ValueError):
    pass


@dataclass(frozen=True)
class VariableRef:
    id: int
    name: str
    lb: float | None = None
    ub: float | None = None


@dataclass
class _QuadConstraint:
    quad: dict[tuple[int, int], float]
    linear: dict[int, float]
    ub: float
    name: str


@dataclass
class _AffineConstraint:
    terms: dict[int, float]
    rhs: float
    name: str


@dataclass(frozen=True)
class Solution:
    status: str
    values: np.ndarray | None
    objective_value: float | None
    max_primal_violation: float | None
    solve_time: float

    def value(self, ref: VariableRef) -> float:
        if self.values is None:
            raise ProgramError(f"no values on a {self.status} solution")
        return float(self.values[ref.id])


def _var_id(v) -> int:
    return v.id if isinstance(v, VariableRef) else int(v)


def _normalize_quad(quad) -> dict[tuple[int, int], float]:
    """Canonical upper-triangle keys, coefficients of x_i*x_j summed."""
    out: dict[tuple[int, int], float] = {}
    for (a, b), coeff in quad.items():
        i, j = sorted((_var_id(a), _var_id(b)))
        out[(i, j)] = out.get((i, j), 0.0) + float(coeff)
    return {k: c for k, c in out.items() if c != 0.0}


def _check_psd(quad: dict[tuple[int, int], float], context: str):
    """Reject quadratic forms that are not positive semidefinite."""
    if all(i == j for i, j in quad):
        bad = [i for (i, _), c in quad.items() if c < -PSD_TOL]
        if bad:
            raise ProgramError(f"{context}: negative diagonal quadratic term")
        return
    support = sorted({i for key in quad for i in key})
    pos = {v: k for k, v in enumerate(support)}
    Q = np.zeros((len(support), len(support)))
    for (i, j), c in quad.items():
        if i == j:
            Q[pos[i], pos[i]] += c
        else:
            Q[pos[i], pos[j]] += c / 2.0
            Q[pos[j], pos[i]] += c / 2.0
    eigmin = float(np.linalg.eigvalsh(Q)[0])
    scale = max(1.0, float(np.abs(Q).max()))
    if eigmin < -PSD_TOL * scale:
        raise ProgramError(
            f"{context}: quadratic form is not convex (min eigenvalue {eigmin:.3e})"
        )


@dataclass
class ConvexProgram:
    """Incrementally built QP/QCQP instance."""

    name: str = "program"
    variables: list[VariableRef] = field(default_factory=list)
    equalities: list[_AffineConstraint] = field(default_factory=list)
    inequalities: list[_AffineConstraint] = field(default_factory=list)
    quad_inequalities: list[_QuadConstraint] = field(default_factory=list)
    objective_quad: dict[tuple[int, int], float] = field(default_factory=dict)
    objective_linear: dict[int, float] = field(default_factory=dict)
    objective_constant: float = 0.0

    @property
    def num_variables(self) -> int:
        return len(self.variables)

    @property
    def num_constraints(self) -> int:
        return len(self.equalities) + len(self.inequalities) + len(self.quad_inequalities)

    def add_variable(self, name: str, lb: float | None = None, ub: float | None = None) -> VariableRef:
        if lb is not None and ub is not None and lb > ub:
            raise ProgramError(f"variable {name}: empty bounds [{lb}, {ub}]")
        ref = VariableRef(id=len(self.variables), name=name, lb=lb, ub=ub)
        self.variables.append(ref)
        return ref

    def add_variables(self, prefix: str, count: int, lb=None, ub=None) -> list[VariableRef]:
        return [self.add_variable(f"{prefix}[{k}]", lb=lb, ub=ub) for k in range(count)]

    def add_affine_eq(self, terms: dict, rhs: float, name: str = "") -> None:
        self.equalities.append(
            _AffineConstraint(
                terms={_var_id(v): float(c) for v, c in terms.items()},
                rhs=float(rhs),
                name=name or f"eq{len(self.equalities)}",
            )
        )

    def add_affine_ineq(self, terms: dict, ub: float, name: str = "") -> None:
        """sum(terms) <= ub."""
        self.inequalities.append(
            _AffineConstraint(
                terms={_var_id(v): float(c) for v, c in terms.items()},
                rhs=float(ub),
                name=name or f"ineq{len(self.inequalities)}",
            )
        )

    def add_quad_ineq(self, quad: dict, linear: dict | None, ub: float, name: str = "") -> None:
        """x'Qx + c'x <= ub with Q required positive semidefinite."""
        canon = _normalize_quad(quad)
        label = name or f"quad{len(self.quad_inequalities)}"
        _check_psd(canon, label)
        self.quad_inequalities.append(
            _QuadConstraint(
                quad=canon,
                linear={_var_id(v): float(c) for v, c in (linear or {}).items()},
                ub=float(ub),
                name=label,
            )
        )

    def set_quad_objective(self, quad: dict, linear: dict | None = None, constant: float = 0.0) -> None:
        canon = _normalize_quad(quad)
        _check_psd(canon, "objective")
        self.objective_quad = canon
        self.objective_linear = {_var_id(v): float(c) for v, c in (linear or {}).items()}
        self.objective_constant = float(constant)

    # -- evaluation against stored data (used for the post-solve re-check) --

    def _affine_value(self, terms: dict[int, float], x: np.ndarray) -> float:
        return float(sum(c * x[i] for i, c in terms.items()))

    def _quad_value(self, quad, linear, x: np.ndarray) -> float:
        total = sum(c * x[i] * x[j] for (i, j), c in quad.items())
        total += sum(c * x[i] for i, c in linear.items())
        return float(total)

    def objective_at(self, x: np.ndarray) -> float:
        return (
            self._quad_value(self.objective_quad, self.objective_linear, x)
            + self.objective_constant
        )

    def max_violation(self, x: np.ndarray) -> float:
        """Worst scaled constraint violation of a candidate point."""
        worst = 0.0
        for con in self.equalities:
            gap = abs(self._affine_value(con.terms, x) - con.rhs)
            worst = max(worst, gap / max(1.0, abs(con.rhs)))
        for con in self.inequalities:
            gap = self._affine_value(con.terms, x) - con.rhs
            worst = max(worst, gap / max(1.0, abs(con.rhs)))
        for con in self.quad_inequalities:
            gap = self._quad_value(con.quad, con.linear, x) - con.ub
            worst = max(worst, gap / max(1.0, abs(con.ub)))
        for ref in self.variables:
            if ref.lb is not None:
                worst = max(worst, (ref.lb - x[ref.id]) / max(1.0, abs(ref.lb)))
            if ref.ub is not None:
                worst = max(worst, (x[ref.id] - ref.ub) / max(1.0, abs(ref.ub)))
        return worst

    def dump_text(self) -> str:
        """Human-readable listing of the whole program."""
        lines = [f"# {self.name}: {self.num_variables} variables, "
                 f"{self.num_constraints} constraints"]
        for ref in self.variables:
            bounds = f" in [{ref.lb}, {ref.ub}]" if (ref.lb is not None or ref.ub is not None) else ""
            lines.append(f"var x{ref.id} ({ref.name}){bounds}")

        def render_terms(terms):
            return " + ".join(f"{c:g}*x{i}" for i, c in sorted(terms.items())) or "0"

        def render_quad(quad):
            parts = [
                f"{c:g}*x{i}*x{j}" if i != j else f"{c:g}*x{i}^2"
                for (i, j), c in sorted(quad.items())
            ]
            return " + ".join(parts) or "0"

        lines.append(
            "minimize "
            + render_quad(self.objective_quad)
            + " + "
            + render_terms(self.objective_linear)
            + (f" + {self.objective_constant:g}" if self.objective_constant else "")
        )
        for con in self.equalities:
            lines.append(f"{con.name}: {render_terms(con.terms)} == {con.rhs:g}")
        for con in self.inequalities:
            lines.append(f"{con.name}: {render_terms(con.terms)} <= {con.rhs:g}")
        for con in self.quad_inequalities:
            lines.append(
                f"{con.name}: {render_quad(con.quad)} + {render_terms(con.linear)}"
                f" <= {con.ub:g}"
            )
        return "\n".join(lines) + "\n"


def _quad_cvxpy_expr(quad: dict, x):
    """PSD quadratic form as a cvxpy expression via its square-root factor."""
    import cvxpy as cp

    if not quad:
        return 0
    if all(i == j for i, j in quad):
        idx = sorted(i for i, _ in quad)
        w = np.sqrt(np.array([max(quad[(i, i)], 0.0) for i in idx]))
        return cp.sum_squares(cp.multiply(w, x[idx]))
    support = sorted({i for key in quad for i in key})
    pos = {v: k for k, v in enumerate(support)}
    Q = np.zeros((len(support), len(support)))
    for (i, j), c in quad.items():
        if i == j:
            Q[pos[i], pos[i]] += c
        else:
            Q[pos[i], pos[j]] += c / 2.0
            Q[pos[j], pos[i]] += c / 2.0
    lam, vec = np.linalg.eigh(Q)
    lam = np.clip(lam, 0.0, None)
    M = np.diag(np.sqrt(lam)) @ vec.T
    return cp.sum_squares(M @ x[support])


def _linear_cvxpy_expr(terms: dict, x):
    if not terms:
        return 0
    idx = sorted(terms)
    coeff = np.array([terms[i] for i in idx])
    return coeff @ x[idx]


DEFAULT_SOLVER_OPTIONS = {
    "CLARABEL": {
        "tol_feas": 1e-12,
        "tol_gap_abs": 1e-12,
        "tol_gap_rel": 1e-12,
        "max_iter": 200,
    },
}


def solve(
    program: ConvexProgram,
    tol: float = 1e-8,
    backend: str = "CLARABEL",
    snap_tol: float = 1e-5,
    solver_options: dict | None = None,
) -> Solution:
    """Solve the program and re-verify the answer against the stored data.

    Values within snap_tol of a declared variable bound are snapped onto the
    bound (interior-point solutions hover near active bounds); the reported
    max_primal_violation is computed after snapping, so the polish never
    hides an infeasibility.
    """
    import cvxpy as cp
    from scipy import sparse

    n = program.num_variables
    if n == 0:
        raise ProgramError("program has no variables")
    x = cp.Variable(n)

    def stacked(rows):
        """All affine rows as one sparse matrix constraint (fast to compile)."""
        data, ri, ci = [], [], []
        rhs = np.empty(len(rows))
        for r, con in enumerate(rows):
            rhs[r] = con.rhs
            for i, c in con.terms.items():
                ri.append(r)
                ci.append(i)
                data.append(c)
        A = sparse.csr_matrix((data, (ri, ci)), shape=(len(rows), n))
        return A, rhs

    constraints = []
    if program.equalities:
        A, b = stacked(program.equalities)
        constraints.append(A @ x == b)
    if program.inequalities:
        A, b = stacked(program.inequalities)
        constraints.append(A @ x <= b)
    for con in program.quad_inequalities:
        constraints.append(
            _quad_cvxpy_expr(con.quad, x) + _linear_cvxpy_expr(con.linear, x) <= con.ub
        )
    lb_idx = [r.id for r in program.variables if r.lb is not None]
    if lb_idx:
        constraints.append(x[lb_idx] >= np.array([program.variables[i].lb for i in lb_idx]))
    ub_idx = [r.id for r in program.variables if r.ub is not None]
    if ub_idx:
        constraints.append(x[ub_idx] <= np.array([program.variables[i].ub for i in ub_idx]))

    objective = cp.Minimize(
        _quad_cvxpy_expr(program.objective_quad, x)
        + _linear_cvxpy_expr(program.objective_linear, x)
        + program.objective_constant
    )

    options = dict(DEFAULT_SOLVER_OPTIONS.get(backend, {}))
    if solver_options:
        options.update(solver_options)

    problem = cp.Problem(objective, constraints)
    start = time.perf_counter()
    try:
        problem.solve(solver=backend, **options)
    except cp.error.SolverError:
        return Solution("numeric-failure", None, None, None, time.perf_counter() - start)
    elapsed = time.perf_counter() - start

    status_map = {
        cp.OPTIMAL: "optimal",
        cp.OPTIMAL_INACCURATE: "optimal",
        cp.INFEASIBLE: "infeasible",
        cp.INFEASIBLE_INACCURATE: "infeasible",
        cp.UNBOUNDED: "unbounded",
        cp.UNBOUNDED_INACCURATE: "unbounded",
    }
    status = status_map.get(problem.status, "numeric-failure")
    if status != "optimal" or x.value is None:
        return Solution(status, None, None, None, elapsed)

    values = np.asarray(x.value, dtype=float).reshape(n)
    for ref in program.variables:
        if ref.lb is not None and abs(values[ref.id] - ref.lb) <= snap_tol:
            values[ref.id] = ref.lb
        elif ref.ub is not None and abs(values[ref.id] - ref.ub) <= snap_tol:
            values[ref.id] = ref.ub

    violation = program.max_violation(values)
    if violation > max(tol, 1e-6):
        status = "numeric-failure"
    return Solution(
        status=status,
        values=values,
        objective_value=program.objective_at(values),
        max_primal_violation=violation,
        solve_time=elapsed,
    )
