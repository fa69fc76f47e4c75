"""DC-OPF as a linear program: assembly, solution with duals, KKT checks,
and binding-constraint detection.

The decision vector is ``x = [sg; theta]``.  Equality rows are the slack
angle row followed by the N nodal balance rows; inequality rows come in
four blocks: flow upper, flow lower, generation upper, generation lower.

Dual signs follow the Lagrangian ``c'x + y_eq'(A_eq x - b_eq) +
y_in'(A_in x - b_in)`` so that stationarity reads ``c + A' y = 0`` with
``y_in >= 0``.  ``tau`` is ``y_eq`` in row order: ``tau[0]`` belongs to the
slack-angle row and ``tau[1:]`` to the balance rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import DimensionError, NotOptimal
from .network import check_cost, check_load, flow_matrix, laplacian
from .simplex import OPTIMAL, revised_simplex

BINDING_TOL = 1e-7
RANK_TOL = 1e-9
KKT_TOL = 1e-8

UPPER = "upper"
LOWER = "lower"


@dataclass(frozen=True, eq=False)
class StandardLP:
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_in: np.ndarray
    b_in: np.ndarray
    c: np.ndarray
    n_gen: int
    n_bus: int
    n_edge: int

    @property
    def n_var(self):
        return self.n_gen + self.n_bus

    def blocks(self, v):
        """Split an inequality-row vector into (flow_up, flow_lo, gen_up, gen_lo)."""
        e, g = self.n_edge, self.n_gen
        return v[:e], v[e:2 * e], v[2 * e:2 * e + g], v[2 * e + g:]


def assemble_lp(net, f, limits, load):
    f = check_cost(f, net.n_gen)
    sl = check_load(load, net.n_load)
    limits.check_dims(net)
    g, n, e = net.n_gen, net.n_bus, net.n_edge
    L = laplacian(net)
    BCt = flow_matrix(net)

    A_eq = np.zeros((n + 1, g + n))
    A_eq[0, g] = 1.0
    A_eq[1:g + 1, :g] = -np.eye(g)
    A_eq[1:, g:] = L
    b_eq = np.concatenate([np.zeros(1 + g), -sl])

    A_in = np.zeros((2 * e + 2 * g, g + n))
    A_in[:e, g:] = BCt
    A_in[e:2 * e, g:] = -BCt
    A_in[2 * e:2 * e + g, :g] = np.eye(g)
    A_in[2 * e + g:, :g] = -np.eye(g)
    b_in = np.concatenate([limits.p_max, -limits.p_min, limits.sg_max, -limits.sg_min])
    c = np.concatenate([f, np.zeros(n)])
    return StandardLP(A_eq, b_eq, A_in, b_in, c, g, n, e)


@dataclass(eq=False)
class DispatchSolution:
    status: str
    sg: np.ndarray = None
    theta: np.ndarray = None
    flows: np.ndarray = None
    objective: float = np.nan
    tau: np.ndarray = None
    lambda_plus: np.ndarray = None
    lambda_minus: np.ndarray = None
    mu_plus: np.ndarray = None
    mu_minus: np.ndarray = None
    lp: StandardLP = field(default=None, repr=False)
    basis: np.ndarray = field(default=None, repr=False)
    reduced_costs: np.ndarray = field(default=None, repr=False)
    iterations: int = 0

    @property
    def optimal(self):
        return self.status == OPTIMAL

    @property
    def x(self):
        return np.concatenate([self.sg, self.theta])

    @property
    def y_in(self):
        return np.concatenate([self.mu_plus, self.mu_minus, self.lambda_plus, self.lambda_minus])

    @property
    def y(self):
        return np.concatenate([self.tau, self.y_in])


def _standard_form(lp):
    """Equality form with one nonnegative slack per inequality row."""
    m_eq, nv = lp.A_eq.shape
    m_in = lp.A_in.shape[0]
    A = np.zeros((m_eq + m_in, nv + m_in))
    A[:m_eq, :nv] = lp.A_eq
    A[m_eq:, :nv] = lp.A_in
    A[m_eq:, nv:] = np.eye(m_in)
    c = np.concatenate([lp.c, np.zeros(m_in)])
    lo = np.concatenate([np.full(nv, -np.inf), np.zeros(m_in)])
    hi = np.full(nv + m_in, np.inf)
    return A, c, lo, hi


def solve_lp(lp, *, pivot_tol=1e-9, bland_after=50, _std=None):
    """Solve a StandardLP with the revised simplex and recover all multipliers.

    Free variables stay free inside the solver; inequality rows get slacks.
    Returns a DispatchSolution whose status is Optimal, Infeasible or
    Unbounded (flows are left unset here; see :func:`solve_opf`).
    """
    A, c, lo, hi = _standard_form(lp) if _std is None else _std
    m_eq, nv = lp.A_eq.shape
    b = np.concatenate([lp.b_eq, lp.b_in])
    res = revised_simplex(A, b, c, lo, hi, pivot_tol=pivot_tol, bland_after=bland_after)
    if res.status != OPTIMAL:
        return DispatchSolution(res.status, lp=lp, iterations=res.iterations)
    y = -res.y
    fu, fl, gu, gl = lp.blocks(y[m_eq:])
    g = lp.n_gen
    return DispatchSolution(
        OPTIMAL, sg=res.x[:g], theta=res.x[g:nv], objective=float(lp.c @ res.x[:nv]),
        tau=y[:m_eq], lambda_plus=gu, lambda_minus=gl, mu_plus=fu, mu_minus=fl,
        lp=lp, basis=res.basis, reduced_costs=res.reduced_costs, iterations=res.iterations)


class OPFModel:
    """A network with fixed cost and limits, ready to be solved for many loads.

    The constraint matrices do not depend on the load, so they are built
    once; only the right-hand side changes between solves.
    """

    def __init__(self, net, f, limits, *, pivot_tol=1e-9, bland_after=50):
        self.network = net
        self.cost = check_cost(f, net.n_gen)
        limits.check_dims(net)
        self.limits = limits
        self.pivot_tol = pivot_tol
        self.bland_after = bland_after
        self._lp0 = assemble_lp(net, self.cost, limits, np.ones(net.n_load))
        self._std = _standard_form(self._lp0)
        self._flow = flow_matrix(net)

    @property
    def ctx(self):
        return self.network, self.cost, self.limits

    def lp(self, load, check=True):
        if check:
            sl = check_load(load, self.network.n_load)
        else:
            sl = np.asarray(load, dtype=float)
        b_eq = np.concatenate([np.zeros(1 + self.network.n_gen), -sl])
        return replace(self._lp0, b_eq=b_eq)

    def solve(self, load, check=True):
        """Solve at ``load``; ``check=False`` lets stencils step past zero."""
        sol = solve_lp(self.lp(load, check), pivot_tol=self.pivot_tol,
                       bland_after=self.bland_after, _std=self._std)
        if sol.optimal:
            sol.flows = self._flow @ sol.theta
        return sol


def as_model(ctx):
    """Accept an OPFModel, a CaseFile, or a (network, cost, limits) triple."""
    if isinstance(ctx, OPFModel):
        return ctx
    if hasattr(ctx, "ctx"):
        ctx = ctx.ctx
    return OPFModel(*ctx)


def solve_opf(net, f, limits, load, **kw):
    return OPFModel(net, f, limits, **kw).solve(load)


@dataclass(frozen=True)
class ResidualReport:
    stationarity: float
    primal: float
    dual: float
    complementarity: float
    duality_gap: float

    def max(self):
        return max(self.stationarity, self.primal, self.dual, self.complementarity)

    def ok(self, tol=KKT_TOL):
        return self.max() <= tol

    def as_dict(self):
        return {"stationarity": self.stationarity, "primal": self.primal, "dual": self.dual,
                "complementarity": self.complementarity, "duality_gap": self.duality_gap}


def kkt_residuals(sol, lp=None):
    """Infinity-norm residuals of the KKT system at ``sol``."""
    lp = sol.lp if lp is None else lp
    x = sol.x
    y_in = sol.y_in
    stat = lp.c + lp.A_eq.T @ sol.tau + lp.A_in.T @ y_in
    slack = lp.b_in - lp.A_in @ x
    primal = max(np.abs(lp.A_eq @ x - lp.b_eq).max(initial=0.0),
                 np.maximum(-slack, 0.0).max(initial=0.0))
    gap = lp.c @ x + lp.b_eq @ sol.tau + lp.b_in @ y_in
    return ResidualReport(
        stationarity=float(np.abs(stat).max()),
        primal=float(primal),
        dual=float(np.maximum(-y_in, 0.0).max(initial=0.0)),
        complementarity=float(np.abs(y_in * slack).max(initial=0.0)),
        duality_gap=float(abs(gap)),
    )


@dataclass(frozen=True)
class BindingSet:
    """Binding generator and branch inequalities at an optimum.

    ``gens`` and ``branches`` are sorted tuples of ``(index, side)`` with
    0-based indices.  ``flags`` lists entries where both sides were within
    tolerance, which only happens for (near) degenerate limits.
    """

    gens: tuple
    branches: tuple
    rank_certificate: int
    flags: tuple = ()

    @property
    def S_G(self):
        return tuple(i for i, _ in self.gens)

    @property
    def S_B(self):
        return tuple(e for e, _ in self.branches)

    @property
    def count(self):
        return len(self.gens) + len(self.branches)

    def key(self):
        """Canonical serialisation, stable across runs (1-based indices)."""
        g = ",".join(f"g{i + 1}{s[0].upper()}" for i, s in self.gens)
        b = ",".join(f"b{e + 1}{s[0].upper()}" for e, s in self.branches)
        return f"G[{g}]B[{b}]"

    def same_sets(self, other):
        return self.gens == other.gens and self.branches == other.branches

    def rows(self, lp):
        """Row indices of the binding constraints inside ``lp.A_in``."""
        e, g = lp.n_edge, lp.n_gen
        rows = [i + (2 * e if s == UPPER else 2 * e + g) for i, s in self.gens]
        rows += [k + (0 if s == UPPER else e) for k, s in self.branches]
        return rows

    def as_dict(self, net=None):
        d = {"generators": [{"gen": i + 1, "side": s} for i, s in self.gens],
             "branches": [], "rank_certificate": self.rank_certificate}
        for e, s in self.branches:
            item = {"edge": e + 1, "side": s}
            if net is not None:
                item["name"] = net.edge_name(e)
            d["branches"].append(item)
        if self.flags:
            d["flags"] = list(self.flags)
        return d


def numerical_rank(M, rel_tol=RANK_TOL):
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rel_tol * s[0])) if s[0] > 0 else 0


def _sides(value, upper, lower, tol):
    up = upper - value <= tol * np.maximum(1.0, np.abs(upper))
    lo = value - lower <= tol * np.maximum(1.0, np.abs(lower))
    return up, lo


def detect_binding(sol, limits=None, tol=BINDING_TOL, rank_tol=RANK_TOL):
    if sol.sg is None:
        raise NotOptimal(f"no binding set for a {sol.status.lower()} solve")
    lp = sol.lp
    fu, fl, gu, gl = lp.blocks(lp.b_in)
    if limits is not None:
        fu, fl, gu, gl = limits.p_max, -limits.p_min, limits.sg_max, -limits.sg_min
    flows = lp.A_in[:lp.n_edge] @ sol.x if sol.flows is None else sol.flows
    flags = []

    def collect(values, upper, lower, label):
        up, lo = _sides(values, upper, lower, tol)
        out = []
        for i in np.flatnonzero(up | lo):
            if up[i] and lo[i]:
                flags.append(f"{label}{i + 1}: both sides within tolerance")
                side = UPPER if upper[i] - values[i] <= values[i] - lower[i] else LOWER
            else:
                side = UPPER if up[i] else LOWER
            out.append((int(i), side))
        return tuple(out)

    gens = collect(sol.sg, gu, -gl, "gen")
    branches = collect(flows, fu, -fl, "branch")
    partial = BindingSet(gens, branches, 0)
    Z = np.vstack([lp.A_eq, lp.A_in[partial.rows(lp)]])
    return BindingSet(gens, branches, numerical_rank(Z, rank_tol), tuple(flags))


UNIQUE = "Unique"
MULTIPLE_SUSPECTED = "MultipleSuspected"


def uniqueness_probe(lp, sol, *, tol=1e-9, jitter=1e-9, shift_tol=1e-5, seed=0):
    """Empirical check that the optimum is unique.

    Flags a suspected tie when a nonbasic column prices out at zero, or when
    re-solving with a tiny random cost jitter moves the dispatch.
    """
    nv = lp.n_var
    n_total = nv + lp.A_in.shape[0]
    nonbasic = np.ones(n_total, dtype=bool)
    nonbasic[sol.basis[sol.basis < n_total]] = False
    scale = max(1.0, np.abs(lp.c).max(initial=0.0))
    if np.any(np.abs(sol.reduced_costs[nonbasic]) <= tol * scale):
        return MULTIPLE_SUSPECTED
    rng = np.random.default_rng(seed)
    c = lp.c.copy()
    c[:lp.n_gen] += rng.uniform(0.0, jitter, lp.n_gen)
    jittered = solve_lp(StandardLP(lp.A_eq, lp.b_eq, lp.A_in, lp.b_in, c,
                                   lp.n_gen, lp.n_bus, lp.n_edge))
    if not jittered.optimal or np.abs(jittered.sg - sol.sg).max() > shift_tol:
        return MULTIPLE_SUSPECTED
    return UNIQUE


def multiplier_count(sol, tol=1e-9):
    return int(sum(np.count_nonzero(np.abs(v) > tol)
                   for v in (sol.mu_plus, sol.mu_minus, sol.lambda_plus, sol.lambda_minus)))


def check_dims_lp(lp):
    g, n, e = lp.n_gen, lp.n_bus, lp.n_edge
    if lp.A_eq.shape != (n + 1, g + n) or lp.A_in.shape != (2 * e + 2 * g, g + n):
        raise DimensionError("StandardLP blocks have inconsistent shapes")


def solution_to_dict(sol, net=None, binding=None, residuals=None):
    """JSON-ready dump with a fixed field order."""
    d = {"status": sol.status}
    if sol.optimal:
        d.update({
            "objective": sol.objective,
            "sg": sol.sg.tolist(),
            "theta": sol.theta.tolist(),
            "flows": None if sol.flows is None else sol.flows.tolist(),
            "duals": {
                "tau": sol.tau.tolist(),
                "lambda_plus": sol.lambda_plus.tolist(),
                "lambda_minus": sol.lambda_minus.tolist(),
                "mu_plus": sol.mu_plus.tolist(),
                "mu_minus": sol.mu_minus.tolist(),
            },
        })
        if binding is not None:
            d["binding"] = binding.as_dict(net)
        if residuals is not None:
            d["residuals"] = residuals.as_dict()
    return d
