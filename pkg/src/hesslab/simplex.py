"""Dense two-phase primal simplex with Bland's anti-cycling rule.

Solves ``min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-8
COST_TOL = 1e-10
FEAS_TOL = 1e-9


class LPError(RuntimeError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    value: float
    iterations: int
    status: str = "optimal"


def _pivot(T: np.ndarray, basis: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    basis[r] = c


def _refactor(T: np.ndarray, basis: np.ndarray, M: np.ndarray, b: np.ndarray, cost: np.ndarray) -> None:
    """Rebuild the tableau from the original data to shed accumulated round-off."""
    m = len(basis)
    B = M[:, basis]
    T[:m, :-1] = np.linalg.solve(B, M)
    T[:m, -1] = np.linalg.solve(B, b)
    T[-1, :-1] = cost - cost[basis] @ T[:m, :-1]
    T[-1, -1] = -cost[basis] @ T[:m, -1]


def _run(T: np.ndarray, basis: np.ndarray, allowed: np.ndarray, max_iter: int, refactor) -> int:
    """Minimize the objective stored in the last row of the tableau."""
    m = T.shape[0] - 1
    fresh = False
    for it in range(max_iter):
        cost = T[-1, :-1]
        cand = np.flatnonzero((cost < -COST_TOL) & allowed)
        if not len(cand):
            if fresh:
                return it
            refactor()
            fresh = True
            continue
        c = int(cand[0])
        col = T[:m, c]
        pos = np.flatnonzero(col > PIVOT_TOL * max(1.0, np.abs(col).max()))
        if not len(pos):
            if fresh:
                raise LPError("objective unbounded below")
            refactor()
            fresh = True
            continue
        ratios = np.maximum(T[pos, -1], 0.0) / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12]
        r = int(ties[np.argmin(basis[ties])])
        _pivot(T, basis, r, c)
        fresh = False
    raise LPError(f"simplex iteration cap {max_iter} reached")


def _warm(A: np.ndarray, b: np.ndarray, c: np.ndarray, basis: np.ndarray, max_iter: int) -> LPResult:
    m, ncols = A.shape
    if len(basis) != m or len(set(basis.tolist())) != m:
        raise LPError("starting basis must name one distinct column per row")
    cost = np.zeros(ncols)
    cost[:len(c)] = c
    T = np.zeros((m + 1, ncols + 1))
    try:
        _refactor(T, basis, A, b, cost)
    except np.linalg.LinAlgError:
        raise LPError("starting basis is singular") from None
    if T[:m, -1].min() < -FEAS_TOL:
        raise LPError("starting basis is infeasible")
    allowed = np.ones(ncols, dtype=bool)
    it = _run(T, basis, allowed, max_iter, lambda: _refactor(T, basis, A, b, cost))
    x = np.zeros(ncols)
    x[basis] = T[:m, -1]
    x = x[:len(c)]
    return LPResult(x, float(c @ x), it)


def linprog_bland(c, A_eq=None, b_eq=None, A_ub=None, b_ub=None, max_iter: int = 50_000,
                  basis=None) -> LPResult:
    """Minimize ``c.x``; slack columns follow the variables, inequality rows come first.

    ``basis`` optionally names a feasible starting basis (one column index per
    row, slacks numbered after the variables), which skips phase one.
    """
    c = np.asarray(c, dtype=float)
    nv = len(c)
    rows, rhs = [], []
    n_slack = 0 if A_ub is None else len(b_ub)
    if A_ub is not None:
        A_ub = np.asarray(A_ub, dtype=float)
        for i, (a, b) in enumerate(zip(A_ub, b_ub)):
            s = np.zeros(n_slack)
            s[i] = 1.0
            rows.append(np.concatenate([a, s]))
            rhs.append(float(b))
    if A_eq is not None:
        for a, b in zip(np.asarray(A_eq, dtype=float), b_eq):
            rows.append(np.concatenate([a, np.zeros(n_slack)]))
            rhs.append(float(b))
    A = np.array(rows)
    b = np.array(rhs)
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1
    m, ncols = A.shape
    if basis is not None:
        return _warm(A, b, c, np.array(basis, dtype=np.int64), max_iter)
    total = ncols + m
    T = np.zeros((m + 1, total + 1))
    T[:m, :ncols] = A
    T[:m, ncols:total] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(ncols, total)
    # phase one: minimize the sum of artificials
    T[-1, :ncols] = -A.sum(axis=0)
    T[-1, -1] = -b.sum()
    M = T[:m, :total].copy()
    cost1 = np.zeros(total)
    cost1[ncols:] = 1.0
    allowed = np.ones(total, dtype=bool)
    it1 = _run(T, basis, allowed, max_iter, lambda: _refactor(T, basis, M, b, cost1))
    if -T[-1, -1] > FEAS_TOL * max(1.0, np.abs(b).max()):
        raise LPError("problem is infeasible")
    # drive artificials out of the basis, dropping redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] >= ncols:
            row = np.abs(T[r, :ncols])
            j = int(np.argmax(row))
            if row[j] > 1e-9:
                _pivot(T, basis, r, j)
            else:
                keep[r] = False
    T = np.vstack([T[:m][keep], T[-1:]])
    basis = basis[keep]
    M, b = M[keep], b[keep]
    m = len(basis)
    # phase two
    cost2 = np.zeros(total)
    cost2[:nv] = c
    _refactor(T, basis, M, b, cost2)
    allowed = np.zeros(total, dtype=bool)
    allowed[:ncols] = True
    it2 = _run(T, basis, allowed, max_iter, lambda: _refactor(T, basis, M, b, cost2))
    x = np.zeros(total)
    x[basis] = T[:m, -1]
    x = x[:nv]
    return LPResult(x, float(c @ x), it1 + it2)
