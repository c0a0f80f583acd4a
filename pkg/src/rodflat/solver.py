"""Equality-constrained minimisation by an augmented Lagrangian method.

The outer loop updates multipliers and the penalty weight. When the objective
is a sum of squares the inner problem is itself a nonlinear least-squares
problem and is solved with a sparse Levenberg-Marquardt iteration; otherwise
L-BFGS is used on the augmented Lagrangian. Only the supplied analytic
gradients and Jacobians are consumed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.sparse.linalg import lsqr, splu

from .geometry import DegenerateGeometry

log = logging.getLogger(__name__)

REASONS = ("converged", "max-iter", "line-search-failure", "degeneracy-signal")


@dataclass
class NlpProblem:
    """``min f(x) s.t. c(x) = 0``.

    ``objective(x) -> (f, grad)``; ``constraints(x) -> (c, J)`` with ``J`` a
    sparse or dense ``len(c) x n`` matrix. ``objective_residuals(x) -> (r, Jr)``
    is optional and, when given, must satisfy ``f = r @ r``. ``active`` is a
    boolean row mask over ``c`` (None keeps every row). ``max_inner`` caps
    each augmented-Lagrangian subproblem; ``max_total`` (optional) caps the
    inner iterations of the whole solve. ``dense_rows`` lists
    constraint rows (unmasked numbering) that couple many variables; the
    least-squares inner solver keeps them out of the sparse factorisation.
    Rows with many nonzeros are detected automatically as well.
    """

    n: int
    objective: Callable
    constraints: Callable
    objective_residuals: Callable | None = None
    active: np.ndarray | None = None
    max_inner: int = 500
    max_outer: int = 25
    ctol: float = 1e-6
    gtol: float = 1e-6
    initial_penalty: float = 1e3
    inner_tol0: float = 1e-3
    max_penalty: float = 1e10
    dense_rows: tuple[int, ...] = ()
    max_total: int | None = None

    def with_mask(self, active) -> NlpProblem:
        return replace(self, active=None if active is None else np.asarray(active, dtype=bool))

    def eval_c(self, x):
        c, jac = self.constraints(x)
        c = np.asarray(c, dtype=float)
        jac = sparse.csr_matrix(jac)
        if self.active is not None:
            c = c[self.active]
            jac = jac[np.flatnonzero(self.active)]
        return c, jac


@dataclass
class SolveReport:
    x: np.ndarray
    objective: float
    constraint_inf: float
    stationarity: float
    iterations: int
    outer_iterations: int
    reason: str
    multipliers: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    @property
    def converged(self) -> bool:
        return self.reason == "converged"


def _ls_multipliers(grad_f: np.ndarray, jac: sparse.csr_matrix) -> tuple[np.ndarray, float]:
    """Least-squares multipliers and the residual of ``grad_f + J^T lam``."""
    if jac.shape[0] == 0:
        return np.zeros(0), float(np.max(np.abs(grad_f), initial=0.0))
    lam = lsqr(jac.T.tocsr(), -grad_f, atol=1e-14, btol=1e-14, iter_lim=20 * jac.shape[0] + 100)[0]
    return lam, float(np.max(np.abs(grad_f + jac.T @ lam), initial=0.0))


def _check(problem: NlpProblem, x):
    f, g = problem.objective(x)
    c, jac = problem.eval_c(x)
    lam, stat = _ls_multipliers(np.asarray(g, dtype=float), jac)
    cinf = float(np.max(np.abs(c), initial=0.0))
    return f, cinf, stat, lam


class _Degenerate(Exception):
    pass


def _safe(fn, *args):
    try:
        out = fn(*args)
    except DegenerateGeometry as exc:
        raise _Degenerate(str(exc)) from None
    return out


def _lm_inner(resid, x0, max_iter, gtol, nu=1e-3):
    """Sparse Levenberg-Marquardt on ``||R(x)||^2``.

    ``resid(x) -> (R, J_sparse, dense_rows)`` where ``dense_rows`` is a list of
    ``(value_index, dense_gradient)`` rows kept out of the sparse factorisation
    and handled by a Woodbury update. The damping is ``nu`` times the mean
    diagonal of ``J^T J``; the final ``nu`` is returned so that a following
    call can start from it.
    """
    x = x0.copy()
    r, js, dense = _safe(resid, x)
    cost = float(r @ r)
    nu_grow = 2.0
    it = 0
    status = "max-iter"
    while it < max_iter:
        g = js.T @ r[: js.shape[0]]
        for k, row in dense:
            g = g + row * r[k]
        if np.max(np.abs(g), initial=0.0) <= gtol:
            status = "converged"
            break
        if it % 25 == 0:
            log.debug("  lm %d cost=%.6e |g|=%.3e nu=%s", it, cost, np.max(np.abs(g)), nu)
        jtj = (js.T @ js).tocsc()
        diag = jtj.diagonal().copy()
        for _, row in dense:
            diag += row * row
        # Levenberg damping: a scaled identity. Column scaling (Marquardt)
        # freezes the vertices crowded together by the initial embedding.
        diag = np.full_like(diag, max(float(np.mean(diag)), 1e-12))
        accepted = False
        while not accepted:
            try:
                # the matrix is symmetric positive definite: symmetric mode with
                # a minimum-degree ordering on A + A^T keeps the fill small
                lu = splu(
                    (jtj + sparse.diags(nu * diag)).tocsc(),
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options={"SymmetricMode": True},
                )
            except RuntimeError:
                nu *= 10
                continue
            step = lu.solve(-g)
            if dense:
                # Woodbury update for the dense rows
                u = np.array([row for _, row in dense])
                z = np.column_stack([lu.solve(row) for row in u])
                step = step - z @ np.linalg.solve(np.eye(len(u)) + u @ z, u @ step)
            pred_jd = js @ step
            pred = -(2 * g @ step + pred_jd @ pred_jd + sum((row @ step) ** 2 for _, row in dense))
            x_new = x + step
            try:
                r_new, js_new, dense_new = _safe(resid, x_new)
                cost_new = float(r_new @ r_new)
            except _Degenerate:
                cost_new = np.inf
            if np.isfinite(cost_new) and pred > 0 and cost_new < cost:
                rho = (cost - cost_new) / pred
                x, r, js, dense, cost = x_new, r_new, js_new, dense_new, cost_new
                nu *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
                nu_grow = 2.0
                accepted = True
            else:
                nu *= nu_grow
                nu_grow *= 2
                if nu > 1e16:
                    status = "line-search-failure" if np.isfinite(cost_new) else "degeneracy-signal"
                    return x, it, status, 1e-3
        it += 1
    return x, it, status, nu


def minimize_constrained(problem: NlpProblem, x0) -> SolveReport:
    """Augmented Lagrangian solve; see the module docstring.

    Terminates with ``converged`` when ``max|c| <= ctol`` and the projected
    gradient (residual of the least-squares multiplier fit) is at most
    ``gtol * (1 + |f|)``; otherwise reports why it stopped.
    """
    x = np.array(x0, dtype=float)
    try:
        f, cinf, stat, lam_ls = _check(problem, x)
    except DegenerateGeometry:
        raise ValueError("evaluators are degenerate at the starting point") from None
    if cinf <= problem.ctol and stat <= problem.gtol * (1 + abs(f)):
        return SolveReport(x, f, cinf, stat, 0, 0, "converged", lam_ls)

    lam = lam_ls
    mu = problem.initial_penalty
    nu = 1e-3
    total = 0
    reason = "max-iter"
    best_c = np.inf
    outer = 0
    omega = problem.inner_tol0
    budget = np.inf if problem.max_total is None else problem.max_total
    for outer in range(1, problem.max_outer + 1):
        if total >= budget:
            outer -= 1
            break
        x_prev = x
        cap = int(min(problem.max_inner, budget - total))
        try:
            x, used, inner_status, nu = _inner(problem, x, lam, mu, max(omega, 1e-3 * problem.gtol), nu, cap)
        except _Degenerate:
            reason = "degeneracy-signal"
            break
        total += used
        c, _ = problem.eval_c(x)
        f, cinf, stat, lam_ls = _check(problem, x)
        log.debug(
            "outer %d: f=%.3e |c|=%.3e stat=%.3e mu=%.1e inner=%d (%s)", outer, f, cinf, stat, mu, used, inner_status
        )
        if cinf <= problem.ctol and stat <= problem.gtol * (1 + abs(f)):
            return SolveReport(x, f, cinf, stat, total, outer, "converged", lam_ls)
        if inner_status == "degeneracy-signal":
            reason = "degeneracy-signal"
            break
        if inner_status == "line-search-failure" and np.array_equal(x, x_prev):
            # no descent direction left for the current penalty; raising it
            # further only worsens the conditioning
            reason = "line-search-failure"
            break
        lam = lam + mu * c
        if cinf > 0.25 * best_c:
            mu = min(mu * 10.0, problem.max_penalty)
        best_c = min(best_c, cinf)
        omega *= 0.1
    f, cinf, stat, lam_ls = _check(problem, x)
    return SolveReport(x, f, cinf, stat, total, outer, reason, lam_ls)


def _inner(problem: NlpProblem, x, lam, mu, tol, nu, cap):
    w = np.sqrt(mu / 2.0)
    shift = lam / mu
    dense_idx = np.asarray(problem.dense_rows, dtype=np.int64)
    if problem.active is not None and len(dense_idx):
        keep = problem.active[dense_idx]
        dense_idx = (np.cumsum(problem.active) - 1)[dense_idx[keep]]
    if problem.objective_residuals is not None:

        def resid(z):
            r, jr = problem.objective_residuals(z)
            c, jc = problem.eval_c(z)
            jr = sparse.csr_matrix(jr)
            rows_sparse = [jr]
            vals = [np.asarray(r, dtype=float)]
            dense = []
            # rows with many nonzeros (the area constraint) stay out of the factorisation
            nnz = np.diff(jc.indptr)
            flagged = np.zeros(len(c), dtype=bool)
            flagged[dense_idx] = True
            heavy = np.flatnonzero(flagged | (nnz > max(64, 0.05 * problem.n)))
            light = np.setdiff1d(np.arange(len(c)), heavy)
            rows_sparse.append(w * jc[light])
            vals.append(w * (c[light] + shift[light]))
            base = sum(len(v) for v in vals)
            for k, h in enumerate(heavy):
                vals.append(np.array([w * (c[h] + shift[h])]))
                dense.append((base + k, w * np.asarray(jc[h].todense()).ravel()))
            return np.concatenate(vals), sparse.vstack(rows_sparse, format="csr"), dense

        return _lm_inner(resid, x, cap, gtol=tol, nu=nu)

    def fun(z):
        f, g = _safe(problem.objective, z)
        c, jc = _safe(problem.eval_c, z)
        cs = c + shift
        return f + mu / 2 * cs @ cs, np.asarray(g, dtype=float) + mu * (jc.T @ cs)

    res = minimize(fun, x, jac=True, method="L-BFGS-B", options={"maxiter": cap, "gtol": tol, "ftol": 1e-15})
    status = "converged" if res.success else ("max-iter" if res.nit >= cap else "line-search-failure")
    return res.x, int(res.nit), status, nu
