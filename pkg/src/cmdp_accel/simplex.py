"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves::

    maximize    c @ x
    subject to  A_eq @ x == b_eq
                A_ub @ x <= b_ub
                x >= 0

Sizes in this package are at most a few hundred columns, so a dense tableau
is fine. Bland's rule (lowest-index entering and leaving variable) makes the
pivot sequence deterministic and cycle-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SolverError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LPResult:
    status: str
    x: np.ndarray | None = None
    objective: float | None = None
    # Multipliers for the equality rows then the inequality rows; the dual
    # objective b @ y equals the primal objective at an optimum.
    duals: np.ndarray | None = None
    dual_objective: float | None = None
    iterations: int = 0


def _pivot(T, row, col):
    T[row] /= T[row, col]
    others = np.nonzero(T[:, col])[0]
    for r in others:
        if r != row:
            T[r] -= T[r, col] * T[row]


def _run_simplex(T, basis, cost_row, allowed, tol, max_iter):
    """Minimise the objective held in row ``cost_row`` (reduced costs, last column = -z)."""
    n_rows = T.shape[0] - 2  # two objective rows at the bottom
    iters = 0
    while True:
        reduced = T[cost_row, :-1]
        candidates = np.nonzero((reduced < -tol) & allowed)[0]
        if candidates.size == 0:
            return "done", iters
        col = candidates[0]
        column = T[:n_rows, col]
        pos = np.nonzero(column > tol)[0]
        if pos.size == 0:
            return UNBOUNDED, iters
        ratios = T[pos, -1] / column[pos]
        best = ratios.min()
        ties = pos[ratios <= best + tol * max(1.0, abs(best))]
        row = ties[np.argmin(basis[ties])]
        _pivot(T, row, col)
        basis[row] = col
        iters += 1
        if iters > max_iter:
            raise SolverError(f"simplex exceeded {max_iter} pivots")


def linprog_max(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, tol=1e-10, max_iter=100_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    n = c.size
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).reshape(-1)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).reshape(-1)
    p, k = A_eq.shape[0], A_ub.shape[0]
    rows = p + k

    # Standard form: [A_eq 0; A_ub I] [x; s] = b, then flip rows so b >= 0.
    A = np.zeros((rows, n + k))
    A[:p, :n] = A_eq
    A[p:, :n] = A_ub
    A[p:, n:] = np.eye(k)
    b = np.concatenate([b_eq, b_ub])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign
    n_std = n + k

    # Tableau: constraint rows | phase-2 cost row | phase-1 cost row.
    T = np.zeros((rows + 2, n_std + rows + 1))
    T[:rows, :n_std] = A
    T[:rows, n_std:n_std + rows] = np.eye(rows)
    T[:rows, -1] = b
    T[rows, :n] = -c  # minimise -c @ x
    T[rows + 1, :n_std] = -A.sum(axis=0)
    T[rows + 1, -1] = -b.sum()
    basis = np.arange(n_std, n_std + rows)

    allowed = np.ones(n_std + rows, dtype=bool)
    _, it1 = _run_simplex(T, basis, rows + 1, allowed, tol, max_iter)
    scale = max(1.0, float(np.abs(b).max(initial=0.0)))
    if -T[rows + 1, -1] > 1e-9 * scale:
        return LPResult(INFEASIBLE, iterations=it1)

    # Drive remaining artificials out of the basis; a row with no usable
    # pivot is redundant and is dropped.
    keep = np.ones(rows, dtype=bool)
    for r in range(rows):
        if basis[r] >= n_std:
            nz = np.nonzero(np.abs(T[r, :n_std]) > 1e-9)[0]
            if nz.size:
                _pivot(T, r, nz[0])
                basis[r] = nz[0]
            else:
                keep[r] = False

    allowed[n_std:] = False
    status, it2 = _run_simplex(T, basis, rows, allowed, tol, max_iter)
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, iterations=it1 + it2)

    # Re-solve with the final basis for accuracy instead of trusting the tableau.
    live = np.nonzero(keep)[0]
    Bcols = basis[live]
    Bmat = A[live][:, Bcols]
    x_std = np.zeros(n_std)
    x_std[Bcols] = np.linalg.solve(Bmat, b[live])
    x_std = np.clip(x_std, 0.0, None)
    c_std = np.concatenate([c, np.zeros(k)])
    y_live = np.linalg.solve(Bmat.T, c_std[Bcols])
    y = np.zeros(rows)
    y[live] = y_live
    y *= sign  # undo the row flips
    x = x_std[:n]
    b_orig = np.concatenate([b_eq, b_ub])
    return LPResult(OPTIMAL, x=x, objective=float(c @ x), duals=y,
                    dual_objective=float(b_orig @ y), iterations=it1 + it2)
