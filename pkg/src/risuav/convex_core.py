"""Thin solver contract over cvxpy.

Subproblems build cvxpy problems and hand them over wrapped in a
:class:`ConvexProgram`.  :func:`solve` runs an interior-point conic engine
(Clarabel, SCS as a last resort) and maps the outcome onto a small status
vocabulary.  :func:`kkt_residual` certifies a point independently of the
engine's own dual output:

* ``nlp`` programs (real variables, smooth scalar/elementwise constraints):
  multipliers of the near-active rows are fitted by nonnegative least squares
  and the residual is the worst of stationarity, primal violation and
  complementarity.
* ``sdp`` programs of the form ``max f(X)  s.t.  X >= 0, diag(X) = 1``:
  with ``G = grad f(X)`` the dual slack ``Z = diag(y) - G`` (``y_m = (G X)_mm``)
  must be PSD and satisfy ``Z X = 0``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import cvxpy as cp
import numpy as np
from scipy.optimize import minimize, nnls

NLP_TOL = 1e-7
SDP_TOL = 1e-6

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration-limit"
NUMERICAL_FAILURE = "numerical-failure"
UNBOUNDED = "unbounded"


@dataclass
class ConvexProgram:
    problem: cp.Problem
    kind: str = "nlp"
    # sdp only: the matrix variable and a callable returning grad f at a point
    sdp_variable: Optional[cp.Variable] = None
    sdp_gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def validate(self) -> None:
        if self.kind not in ("nlp", "sdp"):
            raise ValueError(f"unknown program kind {self.kind!r}")
        if not self.problem.is_dcp(dpp=False):
            raise ValueError("program is not DCP-convex")
        if self.kind == "sdp" and self.sdp_variable is None:
            raise ValueError("sdp program needs sdp_variable")


@dataclass(frozen=True)
class SolveReport:
    status: str
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    kkt_residual: float = float("nan")
    iterations: int = 0
    wall_time: float = 0.0
    accurate: bool = True

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _clarabel_opts(tol: float) -> dict:
    return dict(tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol,
                tol_ktratio=max(tol, 1e-8), max_iter=200)


def _attempts(tol: float, thorough: bool = True):
    yield cp.CLARABEL, _clarabel_opts(tol)
    yield cp.CLARABEL, dict(max_iter=400)
    if thorough:
        # first-order fallback: slow, so only when a certificate is wanted
        yield cp.SCS, dict(eps=1e-9, max_iters=20000)


def solve(p: ConvexProgram, tol: Optional[float] = None, certify: bool = True) -> SolveReport:
    """Solve ``p`` and return a report with a KKT certificate.

    ``certify=False`` skips the independent residual check (hot loops); the
    engine status alone then decides ``optimal``.
    """
    if tol is None:
        tol = SDP_TOL if p.kind == "sdp" else NLP_TOL
    prob = p.problem
    t0 = time.perf_counter()
    status = None
    for solver, opts in _attempts(tol, certify):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                prob.solve(solver=solver, warm_start=False, **opts)
        except cp.error.SolverError:
            continue
        status = prob.status
        if status in (cp.OPTIMAL, cp.INFEASIBLE, cp.UNBOUNDED):
            break
        if status == cp.OPTIMAL_INACCURATE and not certify:
            # hot loops guard their own ascent; retrying costs more than it buys
            break
    wall = time.perf_counter() - t0
    stats = prob.solver_stats
    iters = int(stats.num_iters or 0) if stats is not None else 0

    if status is None:
        return SolveReport(NUMERICAL_FAILURE, wall_time=wall)
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SolveReport(INFEASIBLE, iterations=iters, wall_time=wall)
    if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return SolveReport(UNBOUNDED, iterations=iters, wall_time=wall)
    if status == cp.USER_LIMIT:
        return SolveReport(ITERATION_LIMIT, iterations=iters, wall_time=wall)

    values = {v: (None if v.value is None else np.array(v.value)) for v in prob.variables()}
    if any(val is None for val in values.values()):
        return SolveReport(NUMERICAL_FAILURE, iterations=iters, wall_time=wall)
    accurate = status == cp.OPTIMAL
    res = float("nan")
    out = OPTIMAL
    objective = float(prob.value)
    if certify:
        res = kkt_residual(p)
        if p.kind == "nlp" and not res <= tol:
            # conic engines are accurate in objective, less so in x; polish
            res, objective = _polish_nlp(p, res, objective)
            values = {v: np.array(v.value) for v in prob.variables()}
        if not res <= tol:
            out = NUMERICAL_FAILURE
    wall = time.perf_counter() - t0
    return SolveReport(out, values, objective, res, iters, wall, accurate)


# --------------------------------------------------------------------------
# certificates

def _as_dense(g, rows: int, cols: int) -> np.ndarray:
    if g is None:
        return np.full((rows, cols), np.nan)
    arr = g.toarray() if hasattr(g, "toarray") else np.asarray(g, float)
    return np.asarray(arr, float).reshape(rows, cols)


def _gradient_rows(expr, variables, offsets, nvar) -> np.ndarray:
    """Jacobian of ``expr`` (flattened, column-major like cvxpy) wrt all vars."""
    m = int(expr.size)
    jac = np.zeros((m, nvar))
    grads = expr.grad
    for v in variables:
        if v in grads:
            jac[:, offsets[v]:offsets[v] + v.size] = _as_dense(grads[v], v.size, m).T
        else:
            # variable absent from expr
            pass
    return jac


def _set_point(variables, point):
    saved = {v: v.value for v in variables}
    if point is not None:
        for v, val in point.items():
            dt = complex if v.is_complex() else float
            v.value = np.asarray(val, dt).reshape(v.shape) if v.shape else dt(val)
    return saved


def kkt_residual(p: ConvexProgram, point: Optional[dict] = None,
                 active_tol: float = 1e-4) -> float:
    """Certificate residual at ``point`` (defaults to the variables' values)."""
    variables = p.problem.variables()
    saved = _set_point(variables, point)
    try:
        if p.kind == "sdp":
            return _sdp_residual(p)
        return _nlp_residual(p, variables, active_tol)
    finally:
        for v, val in saved.items():
            v.value = val


def _nlp_residual(p: ConvexProgram, variables, active_tol: float) -> float:
    offsets, nvar = {}, 0
    for v in variables:
        offsets[v] = nvar
        nvar += v.size
    obj = p.problem.objective
    sign = -1.0 if isinstance(obj, cp.Maximize) else 1.0
    gf = sign * _gradient_rows(obj.expr, variables, offsets, nvar).ravel()

    rows, vals = [], []
    primal = 0.0
    for con in p.problem.constraints:
        if isinstance(con, cp.constraints.Inequality):
            g = np.ravel(np.asarray(con.expr.value, float), order="F")
            jac = _gradient_rows(con.expr, variables, offsets, nvar)
            primal = max(primal, float(np.max(np.maximum(g, 0.0), initial=0.0)))
            for k in range(g.size):
                if g[k] >= -active_tol * max(1.0, abs(g[k])):
                    rows.append(jac[k])
                    vals.append(g[k])
        elif isinstance(con, cp.constraints.Equality):
            h = np.ravel(np.asarray(con.expr.value, float), order="F")
            jac = _gradient_rows(con.expr, variables, offsets, nvar)
            primal = max(primal, float(np.max(np.abs(h), initial=0.0)))
            for k in range(h.size):
                rows.extend([jac[k], -jac[k]])
                vals.extend([h[k], -h[k]])
        else:
            raise TypeError(f"nlp certificate cannot handle {type(con).__name__}")
    # sign attributes on variables act as bound constraints -x <= 0
    for v in variables:
        if not v.attributes.get("nonneg"):
            continue
        x = np.ravel(np.asarray(v.value, float), order="F")
        primal = max(primal, float(np.max(np.maximum(-x, 0.0), initial=0.0)))
        for k in range(x.size):
            if -x[k] >= -active_tol * max(1.0, abs(x[k])):
                row = np.zeros(nvar)
                row[offsets[v] + k] = -1.0
                rows.append(row)
                vals.append(-x[k])

    scale = max(1.0, float(np.max(np.abs(gf), initial=0.0)))
    if not np.all(np.isfinite(gf)):
        return float("inf")
    if rows:
        A = np.asarray(rows).T
        if not np.all(np.isfinite(A)):
            return float("inf")
        lam, _ = nnls(A, -gf)
        stat = gf + A @ lam
        comp = float(np.max(np.abs(lam * np.asarray(vals))))
    else:
        stat, comp = gf, 0.0
    return max(float(np.max(np.abs(stat), initial=0.0)) / scale, primal, comp / scale)


def _flatten(variables):
    return np.concatenate([np.ravel(np.asarray(v.value, float), order="F") for v in variables])


def _assign(variables, x):
    k = 0
    for v in variables:
        chunk = x[k:k + v.size]
        v.value = chunk.reshape(v.shape, order="F") if v.shape else float(chunk[0])
        k += v.size


def _polish_nlp(p: ConvexProgram, res0: float, obj0: float):
    """SLSQP refinement from the conic solution; keeps whichever is better."""
    prob = p.problem
    variables = prob.variables()
    offsets, nvar = {}, 0
    for v in variables:
        offsets[v] = nvar
        nvar += v.size
    x0 = _flatten(variables)
    sign = -1.0 if isinstance(prob.objective, cp.Maximize) else 1.0

    def at(x):
        _assign(variables, x)

    def f(x):
        at(x)
        val = prob.objective.expr.value
        return np.inf if val is None else sign * float(val)

    def fg(x):
        at(x)
        return sign * _gradient_rows(prob.objective.expr, variables, offsets, nvar).ravel()

    cons = []
    for con in prob.constraints:
        kind = "ineq" if isinstance(con, cp.constraints.Inequality) else "eq"
        flip = -1.0 if kind == "ineq" else 1.0

        def cf(x, con=con, flip=flip):
            at(x)
            return flip * np.ravel(np.asarray(con.expr.value, float), order="F")

        def cj(x, con=con, flip=flip):
            at(x)
            return flip * _gradient_rows(con.expr, variables, offsets, nvar)

        cons.append({"type": kind, "fun": cf, "jac": cj})
    bounds = []
    for v in variables:
        bounds += [(0.0, None) if v.attributes.get("nonneg") else (None, None)] * v.size
    try:
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore")
            sol = minimize(f, x0, jac=fg, constraints=cons, bounds=bounds, method="SLSQP",
                           options={"ftol": 1e-16, "maxiter": 100})
        x1 = sol.x
        at(x1)
        res1 = kkt_residual(p)
    except (ValueError, FloatingPointError, ArithmeticError):
        res1 = np.inf
    if np.isfinite(res1) and res1 < res0:
        at(x1)
        return res1, float(prob.objective.expr.value)
    at(x0)
    return res0, obj0


def _numeric_gradient(p: ConvexProgram, X: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Hermitian G with f(X + D) ~ f(X) + Re Tr(G D) for Hermitian D."""
    var = p.sdp_variable
    expr = p.problem.objective.expr
    complex_var = var.is_complex()
    n = X.shape[0]

    def f(Y):
        var.value = Y if complex_var else np.real(Y)
        return float(np.real(expr.value))

    def d(D):
        return (f(X + h * D) - f(X - h * D)) / (2 * h)

    G = np.zeros((n, n), complex)
    for a in range(n):
        E = np.zeros((n, n), complex)
        E[a, a] = 1
        G[a, a] = d(E)
        for b in range(a + 1, n):
            E = np.zeros((n, n), complex)
            E[a, b] = E[b, a] = 1
            re = d(E) / 2
            im = 0.0
            if complex_var:
                E = np.zeros((n, n), complex)
                E[a, b], E[b, a] = 1j, -1j
                im = d(E) / 2
            # Re Tr(G D) with D = i(E_ab - E_ba) picks 2 Im G_ab with this sign
            G[a, b] = re + 1j * im
            G[b, a] = np.conj(G[a, b])
    var.value = X if complex_var else np.real(X)
    return G


def _sdp_residual(p: ConvexProgram) -> float:
    X = np.asarray(p.sdp_variable.value)
    X = 0.5 * (X + X.conj().T)
    if p.sdp_gradient is not None:
        G = np.asarray(p.sdp_gradient(X))
    else:
        G = _numeric_gradient(p, X)
        if isinstance(p.problem.objective, cp.Minimize):
            G = -G
    G = 0.5 * (G + G.conj().T)
    y = np.real(np.diag(G @ X))
    Z = np.diag(y) - G
    scale = max(1.0, float(np.max(np.abs(G))))
    dual = max(0.0, -float(np.linalg.eigvalsh(Z)[0]))
    comp = float(np.max(np.abs(Z @ X)))
    eig_x = float(np.linalg.eigvalsh(X)[0])
    primal = max(0.0, -eig_x, float(np.max(np.abs(np.real(np.diag(X)) - 1.0))))
    return max(dual / scale, comp / scale, primal)
