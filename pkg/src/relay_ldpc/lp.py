"""Dense two-phase simplex with Bland's anti-cycling rule.

Solves
    minimize    c @ x
    subject to  A_ub @ x <= b_ub,  A_eq @ x == b_eq,  x >= 0.

Problem sizes in this toolkit are small (tens of variables, a few hundred
rows), so a dense tableau is simple and exact enough. Every answer is
certified against the original data before it is returned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible, LpNumericalFailure, Unbounded

PIVOT_TOL = 1e-9
CERT_TOL = 1e-8


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    duals_ub: np.ndarray
    duals_eq: np.ndarray
    pivots: int
    residual: float


def _as_2d(a, n):
    if a is None:
        return np.zeros((0, n))
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, n)


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    nz = np.nonzero(np.abs(colvals) > 0.0)[0]
    if nz.size:
        T[nz] -= np.outer(colvals[nz], T[row])
    basis[row] = col


def _run_simplex(T, basis, allowed, max_pivots):
    """Bland's rule on tableau T whose last row holds reduced costs.

    `allowed` masks columns that may enter. Returns the number of pivots.
    """
    m = T.shape[0] - 1
    pivots = 0
    while True:
        cost = T[-1, :-1]
        cand = np.nonzero((cost < -PIVOT_TOL) & allowed)[0]
        if cand.size == 0:
            return pivots
        col = cand[0]
        colv = T[:m, col]
        pos = colv > PIVOT_TOL
        if not pos.any():
            raise Unbounded("objective is unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = T[:m, -1][pos] / colv[pos]
        best = ratios.min()
        ties = np.nonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))[0]
        row = ties[np.argmin(basis[ties])]
        _pivot(T, basis, row, col)
        pivots += 1
        if pivots > max_pivots:
            raise LpNumericalFailure(f"no convergence after {max_pivots} pivots")


def lp_solve(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_pivots=50_000):
    """Solve the LP and return an :class:`LpResult`.

    Raises Infeasible, Unbounded or LpNumericalFailure.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A_ub = _as_2d(A_ub, n)
    A_eq = _as_2d(A_eq, n)
    b_ub = np.asarray(b_ub if b_ub is not None else [], dtype=float).ravel()
    b_eq = np.asarray(b_eq if b_eq is not None else [], dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    if b_ub.size != m_ub or b_eq.size != m_eq:
        raise ValueError("constraint matrix/vector sizes disagree")
    for arr in (c, A_ub, A_eq, b_ub, b_eq):
        if not np.all(np.isfinite(arr)):
            raise ValueError("LP data must be finite")

    m = m_ub + m_eq
    # columns: x (n) | slacks (m_ub) | artificials (m)
    A = np.zeros((m, n + m_ub))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    flip = b < 0
    A[flip] *= -1
    b = np.where(flip, -b, b)

    ncols = n + m_ub + m
    T = np.zeros((m + 1, ncols + 1))
    T[:m, : n + m_ub] = A
    T[:m, n + m_ub: ncols] = np.eye(m)
    T[:m, -1] = b
    basis = np.arange(n + m_ub, ncols)
    # a slack with coefficient +1 can start in the basis directly
    for i in range(m_ub):
        if not flip[i]:
            basis[i] = n + i
    art_in_use = basis >= n + m_ub
    if art_in_use.any():
        T[-1, :] = -T[:m][art_in_use].sum(axis=0)
        T[-1, n + m_ub: ncols] = 0.0
        # unused artificials are simply never allowed to enter
    allowed = np.zeros(ncols, dtype=bool)
    allowed[: n + m_ub] = True

    pivots = _run_simplex(T, basis, allowed, max_pivots) if art_in_use.any() else 0
    if art_in_use.any():
        phase1 = -T[-1, -1]
        if phase1 > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
            raise Infeasible(f"phase-1 residual {phase1:.3e}")
        # drive remaining artificials out of the basis
        keep = np.ones(m, dtype=bool)
        for row in range(m):
            if basis[row] >= n + m_ub:
                cols = np.nonzero(np.abs(T[row, : n + m_ub]) > PIVOT_TOL)[0]
                if cols.size:
                    _pivot(T, basis, row, cols[0])
                    pivots += 1
                else:
                    keep[row] = False
        if not keep.all():
            T = np.vstack([T[:m][keep], T[-1:]])
            basis = basis[keep]
            m = basis.size

    # phase 2
    T = np.delete(T, np.s_[n + m_ub: ncols], axis=1)
    full_c = np.concatenate([c, np.zeros(m_ub)])
    T[-1, :] = 0.0
    T[-1, :-1] = full_c
    T[-1] -= full_c[basis] @ T[:m]
    allowed = np.ones(n + m_ub, dtype=bool)
    pivots += _run_simplex(T, basis, allowed, max_pivots)

    return _certify(c, A_ub, b_ub, A_eq, b_eq, A, b, flip, basis, pivots)


def _certify(c, A_ub, b_ub, A_eq, b_eq, A, b, flip, basis, pivots):
    """Recompute the basic solution from original data and check optimality.

    Checks primal feasibility, dual feasibility (reduced costs) and the
    duality gap, all against a relative tolerance CERT_TOL.
    """
    n = c.size
    m_ub = A_ub.shape[0]
    full_c = np.concatenate([c, np.zeros(m_ub)])
    B = A[:, basis]
    try:
        xb, *_ = np.linalg.lstsq(B, b, rcond=None)
        y, *_ = np.linalg.lstsq(B.T, full_c[basis], rcond=None)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise LpNumericalFailure(str(exc)) from exc
    z = np.zeros(n + m_ub)
    z[basis] = xb
    x = np.clip(z[:n], 0.0, None)

    scale = 1.0 + np.abs(b).max(initial=0.0)
    primal = max(
        np.max(A_ub @ x - b_ub, initial=0.0),
        np.max(np.abs(A_eq @ x - b_eq), initial=0.0),
        np.max(-z, initial=0.0),
    ) / scale
    reduced = full_c - A.T @ y
    dual = max(0.0, -reduced.min(initial=0.0)) / (1.0 + np.abs(full_c).max(initial=0.0))
    obj = float(c @ x)
    gap = abs(obj - float(b @ y)) / (1.0 + abs(obj))
    slackness = float(np.max(np.abs(z * reduced), initial=0.0)) / (1.0 + abs(obj))
    residual = max(primal, dual, gap, slackness)
    if residual > CERT_TOL:
        raise LpNumericalFailure(f"certification residual {residual:.3e}")

    # undo the row flips so duals refer to the constraints as given
    y_signed = np.where(flip, -y, y)
    return LpResult(
        x=x,
        objective=obj,
        duals_ub=y_signed[:m_ub],
        duals_eq=y_signed[m_ub:],
        pivots=pivots,
        residual=float(residual),
    )
