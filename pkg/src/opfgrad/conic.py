"""Derivative of the LP solution map through the homogeneous self-dual embedding.

Primal ``min c'x  s.t.  Ax + s = b, s in K`` with ``K = {0}^p x R_+^q``;
dual ``max -b'y  s.t.  A'y + c = 0, y in K*`` with ``K* = R^p x R_+^q``.
A solution pair is encoded as ``z = (x, y - s, 1)``; ``P_C z`` recovers
``(x, y, 1)`` where ``C = R^n x K* x R_+``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .exceptions import DimensionError, InfeasibleError, NotOptimal, SingularM
from .jacobian import CONIC, BindingCombo, JacobianMatrix
from .lp import as_model, detect_binding

ZERO = "Zero"
NONNEG = "NonNeg"

EMBED_TOL = 1e-8
DERIV_TOL = 1e-12
COND_LIMIT = 1e12


class NondifferentiablePoint(UserWarning):
    """A nonnegative-cone coordinate sits at 0 where the projection has a kink."""


@dataclass(frozen=True, eq=False)
class ConicProblem:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    cones: tuple

    def __post_init__(self):
        m, n = self.A.shape
        if self.b.shape != (m,) or self.c.shape != (n,):
            raise DimensionError("A, b, c shapes disagree")
        if any(d <= 0 for _, d in self.cones) or sum(d for _, d in self.cones) != m:
            raise DimensionError("cone dimensions must be positive and sum to m")
        if any(k not in (ZERO, NONNEG) for k, _ in self.cones):
            raise DimensionError("only Zero and NonNeg cones are supported")

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    def nonneg_mask(self):
        return np.concatenate([np.full(d, k == NONNEG) for k, d in self.cones])


@dataclass(frozen=True, eq=False)
class PerturbationTriple:
    dA: np.ndarray = None
    db: np.ndarray = None
    dc: np.ndarray = None

    def __post_init__(self):
        for v in (self.dA, self.db, self.dc):
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError("perturbation entries must be finite")


@dataclass(frozen=True, eq=False)
class SelfDualPoint:
    z: np.ndarray
    n: int
    m: int
    residual: float = 0.0

    @property
    def z1(self):
        return self.z[:self.n]

    @property
    def z2(self):
        return self.z[self.n:self.n + self.m]

    @property
    def z3(self):
        return float(self.z[-1])


@dataclass(eq=False)
class ConicDerivative:
    dx: np.ndarray
    dy: np.ndarray
    ds: np.ndarray
    nondifferentiable: tuple = ()
    condition: float = np.nan
    method: str = "lu"
    residual: float = 0.0


def to_conic(lp):
    A = np.vstack([lp.A_eq, lp.A_in])
    b = np.concatenate([lp.b_eq, lp.b_in])
    cones = ((ZERO, lp.A_eq.shape[0]), (NONNEG, lp.A_in.shape[0]))
    return ConicProblem(A, b, lp.c.copy(), cones)


def assemble_Q(p):
    m, n = p.A.shape
    Q = np.zeros((n + m + 1, n + m + 1))
    Q[:n, n:n + m] = p.A.T
    Q[:n, -1] = p.c
    Q[n:n + m, :n] = -p.A
    Q[n:n + m, -1] = p.b
    Q[-1, :n] = -p.c
    Q[-1, n:n + m] = -p.b
    return Q


def assemble_dQ(p, pert):
    """Same layout as Q, filled only where the perturbation is nonzero."""
    m, n = p.A.shape
    dQ = np.zeros((n + m + 1, n + m + 1))
    if pert.dA is not None:
        dQ[:n, n:n + m] = pert.dA.T
        dQ[n:n + m, :n] = -pert.dA
    if pert.dc is not None:
        dQ[:n, -1] = pert.dc
        dQ[-1, :n] = -pert.dc
    if pert.db is not None:
        dQ[n:n + m, -1] = pert.db
        dQ[-1, n:n + m] = -pert.db
    return dQ


def cone_projection(z2, cones):
    """Project onto K*: identity on the dual of each Zero block, max(0, .) on NonNeg."""
    out = np.array(z2, dtype=float, copy=True)
    i = 0
    for kind, d in cones:
        if kind == NONNEG:
            out[i:i + d] = np.maximum(out[i:i + d], 0.0)
        i += d
    return out


def project_C(z, n, cones):
    z = np.asarray(z, dtype=float)
    return np.concatenate([z[:n], cone_projection(z[n:-1], cones), [max(z[-1], 0.0)]])


def project_polar_C(z, n, cones):
    """Projection onto -C* = {0}^n x -K x R_-."""
    z = np.asarray(z, dtype=float)
    m = z.size - n - 1
    out = np.zeros_like(z)
    i = n
    for kind, d in cones:
        if kind == NONNEG:
            out[i:i + d] = np.minimum(z[i:i + d], 0.0)
        i += d
    assert i == n + m
    out[-1] = min(z[-1], 0.0)
    return out


def cone_projection_derivative(z, n, cones, deriv_tol=DERIV_TOL):
    """Diagonal of DP_C at ``z`` and the positions where a kink was hit.

    NonNeg coordinates use 1/2 (sign(x) + 1); at |x| <= deriv_tol the value
    0.5 is used and the index is reported.
    """
    z = np.asarray(z, dtype=float)
    d = np.ones(z.size)
    kinks = []
    i = n
    for kind, dim in cones:
        if kind == NONNEG:
            blk = z[i:i + dim]
            d[i:i + dim] = 0.5 * (np.sign(blk) + 1.0)
            near = np.flatnonzero(np.abs(blk) <= deriv_tol)
            d[i + near] = 0.5
            kinks.extend(int(k) for k in near)
        i += dim
    d[-1] = 0.5 * (np.sign(z[-1]) + 1.0)
    return d, tuple(kinks)


def embed_from_solution(p, x, y, s, embed_tol=EMBED_TOL):
    """Encode an optimal primal-dual triple as a self-dual point with z3 = 1."""
    z = np.concatenate([x, y - s, [1.0]])
    n = p.n
    u = project_C(z, n, p.cones)
    v = u - z
    residual = float(np.abs(assemble_Q(p) @ u - v).max())
    if residual > embed_tol:
        raise NotOptimal(f"embedding residual {residual:.3e} exceeds {embed_tol:g}")
    return SelfDualPoint(z, n, p.m, residual)


def embed_lp_solution(lp, sol, embed_tol=EMBED_TOL):
    """Conic problem and embedded point for a solved StandardLP."""
    if not sol.optimal:
        raise NotOptimal(f"solution status is {sol.status}")
    p = to_conic(lp)
    y = np.concatenate([sol.tau, sol.y_in])
    s = p.b - p.A @ sol.x
    s[:lp.A_eq.shape[0]] = 0.0
    s[lp.A_eq.shape[0]:] = np.maximum(s[lp.A_eq.shape[0]:], 0.0)
    return p, embed_from_solution(p, sol.x, y, s, embed_tol)


class DerivativeSystem:
    """``M`` for one embedded point, factored once for many perturbations.

    ``M`` is solved by LU unless its condition number exceeds ``cond_limit``,
    in which case least squares is used.  For LPs the block of ``Q`` acting
    on active coordinates is skew and of odd size, so ``M`` is generally
    singular and least squares is the normal path; the recovery formulas
    remove the component along the null direction.
    """

    def __init__(self, p, point, *, deriv_tol=DERIV_TOL, cond_limit=COND_LIMIT):
        self.p, self.point = p, point
        self.Q = assemble_Q(p)
        self.u = project_C(point.z, p.n, p.cones)
        self.D, self.kinks = cone_projection_derivative(point.z, p.n, p.cones, deriv_tol)
        k = self.Q.shape[0]
        self.M = ((self.Q - np.eye(k)) * self.D + np.eye(k)) / point.z3
        self.condition = float(np.linalg.cond(self.M))
        self.method = "lu" if self.condition <= cond_limit else "lstsq"
        if self.method == "lu":
            self._lu = lu_factor(self.M)
        else:
            self._pinv = np.linalg.pinv(self.M, rcond=1e-12)
        if self.kinks:
            warnings.warn(f"projection kink at {len(self.kinks)} coordinate(s); using 0.5",
                          NondifferentiablePoint, stacklevel=3)

    def solve(self, g):
        if self.method == "lu":
            dz = lu_solve(self._lu, -g)
        else:
            dz = self._pinv @ -g
        res = float(np.abs(self.M @ dz + g).max(initial=0.0))
        scale = max(1.0, float(np.abs(g).max(initial=0.0)))
        if res > 1e-8 * scale:
            raise SingularM(f"derivative system is inconsistent (residual {res:.3e})",
                            self.condition)
        return dz, res

    def derivative(self, pert):
        p, pt = self.p, self.point
        n, m = p.n, p.m
        g = assemble_dQ(p, pert) @ (self.u / pt.z3)
        if not np.any(g):
            z = np.zeros
            return ConicDerivative(z(n), z(m), z(m), self.kinks, self.condition, self.method)
        dz, res = self.solve(g)
        x = self.u[:n]
        y = self.u[n:n + m]
        s = y - pt.z2
        dz1, dz2, dz3 = dz[:n], dz[n:n + m], dz[-1]
        Dk = self.D[n:n + m]
        dx = dz1 - dz3 * x
        dy = Dk * dz2 - dz3 * y
        ds = Dk * dz2 - dz2 - dz3 * s
        return ConicDerivative(dx, dy, ds, self.kinks, self.condition, self.method, res)


def solution_map_derivative(p, point, pert, **kw):
    return DerivativeSystem(p, point, **kw).derivative(pert)


def _load_db(lp, dload):
    db = np.zeros(lp.A_eq.shape[0] + lp.A_in.shape[0])
    g = lp.n_gen
    db[1 + g:1 + lp.n_bus] = -np.asarray(dload, dtype=float)
    return db


def _system_at(ctx, load, **kw):
    model = as_model(ctx)
    sol = model.solve(load)
    if not sol.optimal:
        raise InfeasibleError(f"OPF is {sol.status.lower()} at the given load")
    p, point = embed_lp_solution(sol.lp, sol)
    return sol, DerivativeSystem(p, point, **kw)


def opf_derivative_via_conic(ctx, load, dload, **kw):
    """Directional derivative of optimal generation along ``dload``."""
    sol, system = _system_at(ctx, load, **kw)
    d = system.derivative(PerturbationTriple(db=_load_db(sol.lp, dload)))
    return d.dx[:sol.lp.n_gen]


def conic_jacobian(ctx, load, **kw):
    sol, system = _system_at(ctx, load, **kw)
    lp = sol.lp
    nl = lp.n_bus - lp.n_gen
    J = np.empty((lp.n_gen, nl))
    for j in range(nl):
        d = system.derivative(PerturbationTriple(db=_load_db(lp, np.eye(nl)[j])))
        J[:, j] = d.dx[:lp.n_gen]
    return JacobianMatrix(J, CONIC, BindingCombo.from_binding(detect_binding(sol)))
