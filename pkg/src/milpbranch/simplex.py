"""Bounded-variable primal simplex with Bland's rule.

Rows ``A x <= b`` get slack columns; rows whose slack would start negative get
an artificial column and a phase-1 objective. The basis inverse is kept
explicitly and refactorized periodically.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .milp import MilpInstance, SolveStatus

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-6
OPT_TOL = 1e-6
MAX_PIVOTS = 50_000
REFACTOR_EVERY = 50


class BasisStatus(enum.IntEnum):
    BASIC = 0
    AT_LOWER = 1
    AT_UPPER = 2


@dataclass
class LpRelaxation:
    instance: MilpInstance
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        inst = self.instance
        if self.lower.shape != (inst.n,) or self.upper.shape != (inst.n,):
            raise ValueError("local bounds must have length n")
        if np.any(self.lower < inst.lower) or np.any(self.upper > inst.upper):
            raise ValueError("local bounds must lie within the instance bounds")

    @classmethod
    def root(cls, inst: MilpInstance) -> "LpRelaxation":
        return cls(inst, np.array(inst.lower), np.array(inst.upper))


@dataclass
class LpSolution:
    status: SolveStatus
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis_status: np.ndarray
    iterations: int = 0

    @property
    def is_optimal(self) -> bool:
        return self.status == SolveStatus.OPTIMAL


# internal nonbasic states
_BASIC, _LOWER, _UPPER, _FREE = 0, 1, 2, 3


def _failed(status, n, m, iterations=0):
    return LpSolution(status, np.full(n, np.nan), math.nan, np.zeros(m), np.zeros(n),
                      np.full(n, BasisStatus.AT_LOWER, dtype=np.int8), iterations)


_OPTIMAL, _UNBOUNDED, _LIMIT = 0, 1, 2


@njit(cache=True)
def _refactor(M, b, x, basis, state):
    m = M.shape[0]
    Binv = np.ascontiguousarray(np.linalg.inv(M[:, basis]))
    rhs = b.copy()
    for j in range(M.shape[1]):
        if state[j] != _BASIC and x[j] != 0.0:
            rhs -= M[:, j] * x[j]
    xb = Binv @ rhs
    for i in range(m):
        x[basis[i]] = xb[i]
    return Binv


@njit(cache=True)
def _pivot_loop(M, b, cost, lo, hi, x, basis, state, excluded, Binv, budget):
    """Primal simplex iterations with Bland's rule on both the entering and
    the leaving choice. Mutates x, basis, state; returns (outcome, pivots, Binv)."""
    m, N = M.shape
    pivots = 0
    since_refactor = 0
    while True:
        y = np.zeros(m)
        for i in range(m):
            y += cost[basis[i]] * Binv[i]
        d = cost - y @ M
        j = -1
        for k in range(N):
            if excluded[k]:
                continue
            s = state[k]
            if (s == _LOWER and d[k] < -OPT_TOL) or (s == _UPPER and d[k] > OPT_TOL) \
                    or (s == _FREE and abs(d[k]) > OPT_TOL):
                j = k
                break
        if j < 0:
            return _OPTIMAL, pivots, Binv
        if pivots >= budget:
            return _LIMIT, pivots, Binv
        direction = 1.0 if d[j] < 0 else -1.0
        alpha = Binv @ np.ascontiguousarray(M[:, j])

        steps = np.full(m, np.inf)
        row_step = np.inf
        for i in range(m):
            q = basis[i]
            delta = direction * alpha[i]
            if delta > PIVOT_TOL and np.isfinite(lo[q]):
                steps[i] = max((x[q] - lo[q]) / delta, 0.0)
            elif delta < -PIVOT_TOL and np.isfinite(hi[q]):
                steps[i] = max((hi[q] - x[q]) / -delta, 0.0)
            if steps[i] < row_step:
                row_step = steps[i]
        flip = hi[j] - lo[j]
        theta = min(row_step, flip)
        if theta == np.inf:
            return _UNBOUNDED, pivots, Binv

        for i in range(m):
            x[basis[i]] -= theta * direction * alpha[i]
        x[j] += direction * theta
        pivots += 1
        if flip <= row_step:
            if direction > 0:
                state[j] = _UPPER
                x[j] = hi[j]
            else:
                state[j] = _LOWER
                x[j] = lo[j]
            continue

        # among tied rows the smallest leaving variable index wins
        tie = row_step + 1e-12 * (1.0 + row_step)
        r = -1
        for i in range(m):
            if steps[i] <= tie and (r < 0 or basis[i] < basis[r]):
                r = i
        q = basis[r]
        if direction * alpha[r] > 0:
            state[q] = _LOWER
            x[q] = lo[q]
        else:
            state[q] = _UPPER
            x[q] = hi[q]
        basis[r] = j
        state[j] = _BASIC

        pivot_row = Binv[r] / alpha[r]
        Binv -= np.outer(alpha, pivot_row)
        Binv[r] = pivot_row
        since_refactor += 1
        if since_refactor >= REFACTOR_EVERY:
            Binv = _refactor(M, b, x, basis, state)
            since_refactor = 0


class _Tableau:
    """Working state of one simplex run over columns ``[A | I | -E]``."""

    def __init__(self, M, b, lo, hi, x, basis, state):
        self.M, self.b, self.lo, self.hi = M, b, lo, hi
        self.x, self.basis, self.state = x, basis, state
        self.m = M.shape[0]
        self.refactor()

    def refactor(self):
        if self.m:
            self.Binv = _refactor(self.M, self.b, self.x, self.basis, self.state)
        else:
            self.Binv = np.zeros((0, 0))

    def run(self, cost, excluded, budget):
        """Minimize ``cost.x``. Returns (outcome, pivots) with outcome in
        {"optimal", "unbounded", "limit"}."""
        code, pivots, self.Binv = _pivot_loop(self.M, self.b, cost, self.lo, self.hi, self.x,
                                              self.basis, self.state, excluded, self.Binv,
                                              budget)
        return ("optimal", "unbounded", "limit")[code], pivots


def solve_lp(rel: LpRelaxation, max_pivots: int = MAX_PIVOTS) -> LpSolution:
    """Solve the LP relaxation over the node bounds of ``rel``.

    Deterministic for a given input. Duals follow the ``<=`` sign convention of
    a minimization problem, so they are non-positive at optimality.
    """
    inst = rel.instance
    n, m = inst.n, inst.m
    l, u = rel.lower, rel.upper
    if np.any(l > u):
        return _failed(SolveStatus.INFEASIBLE, n, m)
    A, b, c = inst.A, inst.b, inst.c

    if np.all(l == u):
        x = l.copy()
        if m and np.any(A @ x > b + FEAS_TOL):
            return _failed(SolveStatus.INFEASIBLE, n, m)
        return LpSolution(SolveStatus.OPTIMAL, x, float(c @ x), np.zeros(m), c.copy(),
                          np.full(n, BasisStatus.AT_LOWER, dtype=np.int8))

    x0 = np.where(np.isfinite(l), l, np.where(np.isfinite(u), u, 0.0))
    state0 = np.where(np.isfinite(l), _LOWER, np.where(np.isfinite(u), _UPPER, _FREE))
    resid = b - A @ x0
    need = np.flatnonzero(resid < -FEAS_TOL)
    k = need.size

    N = n + m + k
    M = np.zeros((m, N))
    M[:, :n] = A
    M[:, n:n + m] = np.eye(m)
    M[need, n + m + np.arange(k)] = -1.0
    lo = np.concatenate([l, np.zeros(m + k)])
    hi = np.concatenate([u, np.full(m + k, math.inf)])

    x = np.concatenate([x0, np.maximum(resid, 0.0), -resid[need]])
    state = np.concatenate([state0, np.full(m + k, _LOWER)]).astype(np.int8)
    basis = n + np.arange(m)
    basis[need] = n + m + np.arange(k)
    state[basis] = _BASIC
    if k:
        x[n + need] = 0.0

    tab = _Tableau(M, b, lo, hi, x, basis, state)
    excluded = np.zeros(N, dtype=bool)
    used = 0

    if k:
        cost1 = np.zeros(N)
        cost1[n + m:] = 1.0
        outcome, used = tab.run(cost1, excluded, max_pivots)
        if outcome == "limit":
            return _failed(SolveStatus.LIMIT_REACHED, n, m, used)
        tab.refactor()
        if tab.x[n + m:].sum() > FEAS_TOL:
            return _failed(SolveStatus.INFEASIBLE, n, m, used)
        # artificials are pinned to zero for phase 2 and may only leave the basis
        hi[n + m:] = 0.0
        excluded[n + m:] = True
        art_nonbasic = tab.state[n + m:] != _BASIC
        tab.x[n + m:][art_nonbasic] = 0.0

    cost2 = np.zeros(N)
    cost2[:n] = c
    outcome, more = tab.run(cost2, excluded, max_pivots - used)
    used += more
    if outcome == "limit":
        return _failed(SolveStatus.LIMIT_REACHED, n, m, used)
    if outcome == "unbounded":
        return _failed(SolveStatus.UNBOUNDED, n, m, used)

    tab.refactor()
    xs = tab.x[:n].copy()
    # recompute duals on the fresh factorization
    y = cost2[tab.basis] @ tab.Binv if m else np.zeros(0)
    d = c - (y @ A if m else 0.0)
    st = tab.state[:n]
    d[st == _BASIC] = 0.0
    basis_status = np.where(st == _BASIC, BasisStatus.BASIC,
                            np.where(st == _UPPER, BasisStatus.AT_UPPER, BasisStatus.AT_LOWER))
    return LpSolution(SolveStatus.OPTIMAL, xs, float(c @ xs), y, d,
                      basis_status.astype(np.int8), used)


def dual_objective_check(sol: LpSolution, rel: LpRelaxation) -> float:
    """Absolute gap between the primal objective and the dual objective
    ``b.y + sum_j d_j * (active bound of j)``."""
    if sol.status != SolveStatus.OPTIMAL:
        raise ValueError("dual check needs an optimal solution")
    inst = rel.instance
    primal = float(inst.c @ sol.x)
    dual = float(inst.b @ sol.duals) if inst.m else 0.0
    for j in range(inst.n):
        st = sol.basis_status[j]
        if st == BasisStatus.BASIC or sol.reduced_costs[j] == 0.0:
            continue
        bound = rel.upper[j] if st == BasisStatus.AT_UPPER else rel.lower[j]
        if not math.isfinite(bound):
            bound = sol.x[j]
        dual += sol.reduced_costs[j] * bound
    return abs(primal - dual)
