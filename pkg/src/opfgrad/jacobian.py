"""Jacobian of the OPF operator: closed form from a binding set, finite
differences, enumeration of binding combinations, worst-case sensitivity.

Inside one region the binding rows pin ``theta`` through the square system

    R^T theta = [-s_l; fixed gens; fixed flows; 0]

with ``R^T = [L_load; L[S_G]; BC^T[S_B]; e_1^T]``.  Generation is
``L_gen theta``, so ``J = -L_gen (R^T)^{-1}[:, :N_L]``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .exceptions import BudgetExceeded, DimensionError, InfeasibleError, RegionBoundary, SingularCombo
from .lp import BINDING_TOL, RANK_TOL, as_model, detect_binding, numerical_rank
from .network import flow_matrix, laplacian

CLOSED_FORM = "ClosedForm"
FINITE_DIFFERENCE = "FiniteDifference"
CONIC = "Conic"

DEFAULT_BUDGET = 10**6


@dataclass(frozen=True)
class BindingCombo:
    S_G: tuple
    S_B: tuple
    independent: bool = True

    def key(self):
        g = ",".join(str(i + 1) for i in self.S_G)
        b = ",".join(str(e + 1) for e in self.S_B)
        return f"G[{g}]B[{b}]"

    @classmethod
    def from_binding(cls, bs, independent=True):
        return cls(tuple(sorted(bs.S_G)), tuple(sorted(bs.S_B)), independent)


@dataclass(frozen=True, eq=False)
class JacobianMatrix:
    """``J[i, j] = d sg_i / d sl_j`` with a record of how it was obtained."""

    J: np.ndarray
    provenance: str
    combo: BindingCombo = None
    step: float = None

    @property
    def shape(self):
        return self.J.shape

    def column_sums(self):
        return self.J.sum(axis=0)

    def to_csv(self, net=None):
        return jacobian_to_csv(self.J, net)


def _check_sizes(net, S_G, S_B):
    S_G, S_B = tuple(int(i) for i in S_G), tuple(int(e) for e in S_B)
    if len(S_G) + len(S_B) != net.n_gen - 1:
        raise DimensionError(
            f"|S_G|+|S_B| must equal n_gen-1={net.n_gen - 1}, got {len(S_G) + len(S_B)}")
    if any(not 0 <= i < net.n_gen for i in S_G) or any(not 0 <= e < net.n_edge for e in S_B):
        raise DimensionError("binding index out of range")
    return S_G, S_B


def _stack_rt(L, BCt, n_gen, S_G, S_B):
    n = L.shape[0]
    e1 = np.zeros((1, n))
    e1[0, 0] = 1.0
    return np.vstack([L[n_gen:], L[list(S_G)], BCt[list(S_B)], e1])


def assemble_R(net, S_G, S_B):
    """Return ``R``; its transpose stacks load rows, S_G rows, S_B flow rows and e_1."""
    S_G, S_B = _check_sizes(net, S_G, S_B)
    return _stack_rt(laplacian(net), flow_matrix(net), net.n_gen, S_G, S_B).T


def assemble_H(net, S_G, S_B):
    """Square local system over ``x = [sg; theta]`` for the given binding sets."""
    S_G, S_B = _check_sizes(net, S_G, S_B)
    g, n = net.n_gen, net.n_bus
    L = laplacian(net)
    BCt = flow_matrix(net)
    H = np.zeros((n + g, n + g))
    H[:g, :g] = -np.eye(g)
    H[:g, g:] = L[:g]
    H[g:n, g:] = L[g:]
    r = n
    for i in S_G:
        H[r, i] = 1.0
        r += 1
    for e in S_B:
        H[r, g:] = BCt[e]
        r += 1
    H[r, g] = 1.0
    return H


def is_independent(net, S_G, S_B, rank_tol=RANK_TOL, *, _mats=None):
    L, BCt = _mats if _mats is not None else (laplacian(net), flow_matrix(net))
    Rt = _stack_rt(L, BCt, net.n_gen, S_G, S_B)
    return numerical_rank(Rt, rank_tol) == net.n_bus


def _closed_form(L, BCt, n_gen, n_load, S_G, S_B, rank_tol):
    Rt = _stack_rt(L, BCt, n_gen, S_G, S_B)
    if numerical_rank(Rt, rank_tol) < Rt.shape[0]:
        raise SingularCombo(f"binding combination S_G={S_G}, S_B={S_B} is dependent")
    X = lu_solve(lu_factor(Rt), np.eye(Rt.shape[0])[:, :n_load])
    J = -L[:n_gen] @ X
    return J


def closed_form_jacobian(net, S_G, S_B, rank_tol=RANK_TOL):
    """Closed-form Jacobian for an independent binding combination.

    Only the index sets matter; the bound sides do not enter.
    Raises SingularCombo when ``R^T`` is rank deficient.
    """
    S_G, S_B = _check_sizes(net, S_G, S_B)
    J = _closed_form(laplacian(net), flow_matrix(net), net.n_gen, net.n_load, S_G, S_B, rank_tol)
    return JacobianMatrix(J, CLOSED_FORM, BindingCombo(S_G, S_B, True))


def fd_jacobian(ctx, load, step=1e-6, *, tol=BINDING_TOL):
    """Central-difference Jacobian; the binding set must not change within ``+-step``."""
    model = as_model(ctx)
    load = np.asarray(load, dtype=float)
    base = model.solve(load)
    if not base.optimal:
        raise InfeasibleError(f"OPF is {base.status.lower()} at the given load")
    ref = detect_binding(base, tol=tol)
    J = np.empty((model.network.n_gen, load.size))
    for j in range(load.size):
        cols = []
        for sgn in (1.0, -1.0):
            pt = load.copy()
            pt[j] += sgn * step
            # tiny loads may step below zero; the LP is still well defined there
            sol = model.solve(pt, check=False)
            if not sol.optimal or not detect_binding(sol, tol=tol).same_sets(ref):
                raise RegionBoundary(f"binding set changes within +-{step:g} of load {j + 1}")
            cols.append(sol.sg)
        J[:, j] = (cols[0] - cols[1]) / (2 * step)
    return JacobianMatrix(J, FINITE_DIFFERENCE, BindingCombo.from_binding(ref), step)


def combo_count(net):
    g, e = net.n_gen, net.n_edge
    return sum(comb(g, k) * comb(e, g - 1 - k) for k in range(0, g))


def enumerate_binding_combos(net, budget=DEFAULT_BUDGET, rank_tol=RANK_TOL):
    """All (S_G, S_B) with |S_G|+|S_B| = n_gen-1, tagged by independence.

    Ordered by |S_G| descending, then lexicographically by S_G and S_B.
    """
    total = combo_count(net)
    if total > budget:
        raise BudgetExceeded(f"{total} combinations exceed the budget of {budget}")
    g = net.n_gen
    mats = laplacian(net), flow_matrix(net)
    out = []
    for k in range(g - 1, -1, -1):
        for S_G in combinations(range(g), k):
            for S_B in combinations(range(net.n_edge), g - 1 - k):
                out.append(BindingCombo(S_G, S_B, is_independent(net, S_G, S_B, rank_tol, _mats=mats)))
    return out


def combo_jacobians(net, combos=None, rank_tol=RANK_TOL):
    """Closed-form Jacobians for every independent combination, in enumeration order."""
    if combos is None:
        combos = enumerate_binding_combos(net, rank_tol=rank_tol)
    L, BCt = laplacian(net), flow_matrix(net)
    out = []
    for c in combos:
        if c.independent:
            J = _closed_form(L, BCt, net.n_gen, net.n_load, c.S_G, c.S_B, rank_tol)
            out.append((c, J))
    return out


def worst_case_sensitivity(net, i, j, combos=None, *, _jacobians=None):
    """Largest ``|J[i, j]|`` over independent combinations and the first combo achieving it.

    ``i`` and ``j`` are 0-based generator and load positions.
    """
    if not (0 <= i < net.n_gen and 0 <= j < net.n_load):
        raise DimensionError(f"generator {i} or load {j} out of range")
    pairs = _jacobians if _jacobians is not None else combo_jacobians(net, combos)
    best, arg = -1.0, None
    for c, J in pairs:
        v = abs(J[i, j])
        if v > best + 1e-12:
            best, arg = v, c
    return float(best), arg


def worst_case_table(net, combos=None):
    """Rows ``(i, j, value, combo)`` for every generator/load pair."""
    pairs = combo_jacobians(net, combos)
    rows = []
    for i in range(net.n_gen):
        for j in range(net.n_load):
            v, c = worst_case_sensitivity(net, i, j, _jacobians=pairs)
            rows.append((i, j, v, c))
    return rows


def jacobian_to_csv(J, net=None):
    J = np.asarray(J)
    g, nl = J.shape
    buses = range(g + 1, g + nl + 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["gen"] + [f"load_bus_{k}" for k in buses])
    for i in range(g):
        w.writerow([i + 1] + [repr(float(v)) for v in J[i]])
    return buf.getvalue()


def worst_case_to_csv(rows, net):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "value", "S_G", "S_B"])
    for i, j, v, c in rows:
        w.writerow([i + 1, net.n_gen + j + 1, repr(v),
                    " ".join(str(k + 1) for k in c.S_G),
                    " ".join(str(e + 1) for e in c.S_B)])
    return buf.getvalue()
