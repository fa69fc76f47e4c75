"""Dense revised simplex for ``min c'x  s.t.  A x = b,  lo <= x <= hi``.

Bounds may be infinite, so free variables need no splitting: a free
nonbasic variable sits at zero and may enter in either direction, and once
basic it can never block a ratio test.  Phase one minimises the sum of
artificial variables attached to rows that a crash basis cannot cover.

Pricing is Dantzig's rule until ``bland_after`` consecutive degenerate
pivots, after which Bland's smallest-index rule takes over for the rest of
the solve.  Every choice breaks ties by index, so identical inputs always
produce identical pivot sequences.

The pivoting loop is compiled with numba; the sweeps solve tens of
thousands of small LPs and interpreter overhead would dominate otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"
ITERATION_LIMIT = "IterationLimit"
_STATUS = (OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT)


@dataclass
class SimplexResult:
    status: str
    x: np.ndarray          # structural variables
    y: np.ndarray          # row duals, B^T y = c_B
    reduced_costs: np.ndarray
    basis: np.ndarray      # basic column per row; >= n means an artificial
    objective: float
    iterations: int


@njit(cache=True, nogil=True)
def _refactor(A, b, x, basis, is_basic):
    m = A.shape[0]
    B = np.empty((m, m))
    for i in range(m):
        B[:, i] = A[:, basis[i]]
    rhs = b.copy()
    for j in range(A.shape[1]):
        if not is_basic[j] and x[j] != 0.0:
            rhs -= A[:, j] * x[j]
    Binv = np.ascontiguousarray(np.linalg.inv(B))
    xb = np.linalg.solve(B, rhs)
    for i in range(m):
        x[basis[i]] = xb[i]
    return Binv


@njit(cache=True, nogil=True)
def _run(A, b, cost, lo, hi, x, basis, is_basic, excluded, Binv, state,
         pivot_tol, opt_tol, bland_after, max_iter):
    """Pivot until optimal. ``state`` = [iterations, degenerate_run, bland]."""
    m, ntot = A.shape
    alpha = np.empty(m)
    while state[0] < max_iter:
        # pricing
        y = np.zeros(m)
        for i in range(m):
            cb = cost[basis[i]]
            if cb != 0.0:
                y += cb * Binv[i]
        q = -1
        sigma = 0
        best = 0.0
        for j in range(ntot):
            if is_basic[j] or excluded[j] or not hi[j] > lo[j]:
                continue
            d = cost[j]
            for i in range(m):
                d -= y[i] * A[i, j]
            at_lo = x[j] == lo[j]
            at_hi = x[j] == hi[j]
            free = not (at_lo or at_hi)
            s = 0
            if d < -opt_tol and (at_lo or free):
                s = 1
            elif d > opt_tol and (at_hi or free):
                s = -1
            if s == 0:
                continue
            if state[2] == 1:
                q = j
                sigma = s
                break
            if abs(d) > best:
                best = abs(d)
                q = j
                sigma = s
        if q < 0:
            return 0
        # ratio test
        for i in range(m):
            acc = 0.0
            for k2 in range(m):
                acc += Binv[i, k2] * A[k2, q]
            alpha[i] = acc
        t_min = np.inf
        r = -1
        for i in range(m):
            sa = sigma * alpha[i]
            k = basis[i]
            t = np.inf
            if sa > pivot_tol and np.isfinite(lo[k]):
                t = (x[k] - lo[k]) / sa
            elif sa < -pivot_tol and np.isfinite(hi[k]):
                t = (hi[k] - x[k]) / -sa
            else:
                continue
            if t < 0.0:
                t = 0.0
            if r < 0 or t < t_min - 1e-12:
                t_min = t
                r = i
            elif t <= t_min + 1e-12:
                if state[2] == 1:
                    if basis[i] < basis[r]:
                        r = i
                        t_min = min(t, t_min)
                elif abs(alpha[i]) > abs(alpha[r]):
                    r = i
                    t_min = min(t, t_min)
        t_flip = hi[q] - lo[q]
        if r < 0 and not np.isfinite(t_flip):
            return 2
        if r < 0 or t_flip <= t_min:
            step = t_flip
            for i in range(m):
                x[basis[i]] -= sigma * step * alpha[i]
            x[q] = hi[q] if sigma > 0 else lo[q]
        else:
            step = t_min
            leave = basis[r]
            for i in range(m):
                x[basis[i]] -= sigma * step * alpha[i]
            x[q] += sigma * step
            x[leave] = lo[leave] if sigma * alpha[r] > 0 else hi[leave]
            piv = Binv[r] / alpha[r]
            for i in range(m):
                if i != r and alpha[i] != 0.0:
                    Binv[i] -= alpha[i] * piv
            Binv[r] = piv
            basis[r] = q
            is_basic[leave] = False
            is_basic[q] = True
            state[0] += 1
            if state[0] % 50 == 0:
                Binv[:, :] = _refactor(A, b, x, basis, is_basic)
        if step <= 1e-12:
            state[1] += 1
            if state[1] >= bland_after:
                state[2] = 1
        else:
            state[1] = 0
    return 3


@njit(cache=True, nogil=True)
def _solve(A0, b, c, lo0, hi0, pivot_tol, opt_tol, feas_tol, bland_after, max_iter):
    m, n = A0.shape
    ntot = n + m
    A = np.zeros((m, ntot))
    A[:, :n] = A0
    lo = np.zeros(ntot)
    hi = np.zeros(ntot)
    lo[:n] = lo0
    hi[:n] = hi0
    x = np.zeros(ntot)
    for j in range(n):
        if np.isfinite(lo0[j]):
            x[j] = lo0[j]
        elif np.isfinite(hi0[j]):
            x[j] = hi0[j]
    excluded = np.zeros(ntot, dtype=np.bool_)
    excluded[n:] = True
    r = b - A0 @ x[:n]

    # crash: unit columns cover their row when the implied value is in bounds
    basis = np.full(m, -1)
    for j in range(n):
        nz = 0
        row = -1
        for i in range(m):
            if A0[i, j] != 0.0:
                nz += 1
                row = i
        if nz != 1 or basis[row] >= 0:
            continue
        val = x[j] + r[row] / A0[row, j]
        if lo0[j] <= val <= hi0[j]:
            basis[row] = j
            x[j] = val
    n_art = 0
    for i in range(m):
        if basis[i] < 0:
            A[i, n + i] = 1.0 if r[i] >= 0 else -1.0
            x[n + i] = abs(r[i])
            hi[n + i] = np.inf
            excluded[n + i] = False
            basis[i] = n + i
            n_art += 1
    is_basic = np.zeros(ntot, dtype=np.bool_)
    for i in range(m):
        is_basic[basis[i]] = True
    Binv = _refactor(A, b, x, basis, is_basic)
    state = np.zeros(3, dtype=np.int64)

    status = 0
    if n_art > 0:
        phase1 = np.zeros(ntot)
        for i in range(m):
            if not excluded[n + i]:
                phase1[n + i] = 1.0
        status = _run(A, b, phase1, lo, hi, x, basis, is_basic, excluded, Binv, state,
                      pivot_tol, opt_tol, bland_after, max_iter)
        Binv = _refactor(A, b, x, basis, is_basic)
        infeas = 0.0
        for i in range(m):
            infeas += x[n + i]
        bmax = 1.0
        for i in range(m):
            bmax = max(bmax, abs(b[i]))
        if status == 3:
            return 3, x, basis, state[0], A
        if infeas > feas_tol * bmax:
            return 1, x, basis, state[0], A
        x[n:] = 0.0
        # drive remaining artificials out of the basis with degenerate pivots
        for rr in range(m):
            if basis[rr] < n:
                continue
            best = 1e-7
            jbest = -1
            for j in range(n):
                if is_basic[j]:
                    continue
                v = 0.0
                for k2 in range(m):
                    v += Binv[rr, k2] * A[k2, j]
                v = abs(v)
                if v > best:
                    best = v
                    jbest = j
            if jbest >= 0:
                alpha = np.zeros(m)
                for i in range(m):
                    for k2 in range(m):
                        alpha[i] += Binv[i, k2] * A[k2, jbest]
                piv = Binv[rr] / alpha[rr]
                for i in range(m):
                    if i != rr:
                        Binv[i] -= alpha[i] * piv
                Binv[rr] = piv
                is_basic[basis[rr]] = False
                basis[rr] = jbest
                is_basic[jbest] = True
        excluded[n:] = True
        hi[n:] = 0.0
        Binv = _refactor(A, b, x, basis, is_basic)
        state[1] = 0

    cost = np.zeros(ntot)
    cost[:n] = c
    status = _run(A, b, cost, lo, hi, x, basis, is_basic, excluded, Binv, state,
                  pivot_tol, opt_tol, bland_after, max_iter)
    _refactor(A, b, x, basis, is_basic)
    return status, x, basis, state[0], A


def revised_simplex(A, b, c, lo, hi, *, pivot_tol=1e-9, opt_tol=1e-9, feas_tol=1e-9,
                    bland_after=50, max_iter=None):
    A = np.ascontiguousarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,)).copy()
    if max_iter is None:
        max_iter = 50 * (m + n) + 100
    code, x, basis, iters, A_full = _solve(A, b, c, lo, hi, float(pivot_tol), float(opt_tol),
                                   float(feas_tol), int(bland_after), int(max_iter))
    # duals from a fresh factorisation of the final basis
    cost = np.concatenate([c, np.zeros(m)])
    y = np.linalg.solve(A_full[:, basis].T, cost[basis])
    d = c - y @ A
    xs = x[:n].copy()
    return SimplexResult(_STATUS[code], xs, y, d, basis.copy(), float(c @ xs), int(iters))
