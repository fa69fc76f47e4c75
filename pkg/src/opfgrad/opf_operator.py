"""The OPF operator: loads in, unique optimal generation out.

Also checks the regularity conditions that make the operator differentiable,
and builds cost/limit/load data realising a prescribed binding set.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConstructionFailed, DependentSets, InfeasibleError, MultipleOptima
from .jacobian import _check_sizes, closed_form_jacobian, is_independent
from .lp import (BINDING_TOL, LOWER, RANK_TOL, UNIQUE, UPPER, OPFModel, as_model,
                 assemble_lp, detect_binding, solve_lp, uniqueness_probe)
from .network import CapacityLimits, CaseFile, bundled_case, flow_matrix, laplacian, load_case


def _solve_or_raise(model, load):
    sol = model.solve(load)
    if not sol.optimal:
        raise InfeasibleError(f"OPF is {sol.status.lower()} at the given load")
    return sol


def evaluate(ctx, load, *, tol=BINDING_TOL, rank_tol=RANK_TOL, check_unique=True, seed=0):
    """Optimal generation and its binding set.

    Raises InfeasibleError when the load cannot be served and MultipleOptima
    when the optimum is not unique.
    """
    model = as_model(ctx)
    sol = _solve_or_raise(model, load)
    if check_unique and uniqueness_probe(sol.lp, sol, seed=seed) != UNIQUE:
        raise MultipleOptima("optimal generation is not unique; try perturb_cost")
    return sol.sg, detect_binding(sol, tol=tol, rank_tol=rank_tol)


@dataclass(frozen=True)
class RegularityReport:
    binding_count: int
    expected: int
    rank_ok: bool
    strict_complementarity_ok: bool

    @property
    def regular(self):
        return (self.binding_count == self.expected and self.rank_ok
                and self.strict_complementarity_ok)

    def as_tuple(self):
        return (self.binding_count, self.expected, self.rank_ok, self.strict_complementarity_ok)


def regularity_of(sol, *, tol=BINDING_TOL, rank_tol=RANK_TOL, mult_tol=1e-9, binding=None):
    lp = sol.lp
    bs = detect_binding(sol, tol=tol, rank_tol=rank_tol) if binding is None else binding
    rank_ok = bs.rank_certificate == lp.n_bus + 1 + bs.count
    y = sol.y_in
    strict = bool(np.all(y[bs.rows(lp)] > mult_tol))
    return RegularityReport(bs.count, lp.n_gen - 1, bool(rank_ok), strict)


def regularity_report(ctx, load, *, tol=BINDING_TOL, rank_tol=RANK_TOL, mult_tol=1e-9):
    sol = _solve_or_raise(as_model(ctx), load)
    return regularity_of(sol, tol=tol, rank_tol=rank_tol, mult_tol=mult_tol)


def _as_rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def perturb_cost(f, magnitude, seed=None):
    f = np.asarray(f, dtype=float)
    if magnitude == 0:
        return f.copy()
    return np.maximum(f + _as_rng(seed).uniform(0.0, magnitude, f.shape), 0.0)


def perturb_limits(limits, magnitude, seed=None):
    """Move every bound by at most ``magnitude`` while keeping the limits valid.

    Entries whose jitter would break ``max > min`` (or ``sg_min >= 0``) are
    pulled back to the largest valid value, so the result is always a
    legal CapacityLimits.
    """
    if magnitude == 0:
        return limits.replace()
    rng = _as_rng(seed)

    def jit(v):
        return v + rng.uniform(-magnitude, magnitude, v.shape)

    smax, smin = jit(limits.sg_max), np.maximum(jit(limits.sg_min), 0.0)
    pmax, pmin = jit(limits.p_max), jit(limits.p_min)
    bad = smax <= smin
    smax[bad], smin[bad] = limits.sg_max[bad], limits.sg_min[bad]
    bad = pmax <= pmin
    pmax[bad], pmin[bad] = limits.p_max[bad], limits.p_min[bad]
    return CapacityLimits(smax, smin, pmax, pmin)


@dataclass(frozen=True, eq=False)
class Construction:
    cost: np.ndarray
    limits: CapacityLimits
    load: np.ndarray
    binding: object
    attempts: int

    def __iter__(self):
        return iter((self.cost, self.limits, self.load))


def construct_parameters_for_binding(net, S_G, S_B, *, seed=0, retries=20,
                                     tol=BINDING_TOL, rank_tol=RANK_TOL):
    """Build ``(f, limits, load)`` whose unique optimum binds exactly ``(S_G, S_B)``.

    Generators in ``S_G`` sit at their lower bound 0, the others at 1 out of a
    cap of 2.  Loads are uniform.  Branches in ``S_B`` are pinned at the
    realised flow; the rest get slack limits.  The cost is a strictly
    positive combination of the active constraint normals, shifted by a
    constant so that it is nonnegative (a uniform shift does not move the
    optimum because total generation is fixed).
    """
    S_G, S_B = _check_sizes(net, S_G, S_B)
    if not is_independent(net, S_G, S_B, rank_tol):
        raise DependentSets(f"S_G={S_G}, S_B={S_B} are not independent")
    if net.n_load == 0:
        raise ConstructionFailed("construction needs at least one load bus")
    g, n, e = net.n_gen, net.n_bus, net.n_edge
    L = laplacian(net)
    BCt = flow_matrix(net)

    sg = np.ones(g)
    sg[list(S_G)] = 0.0
    load = np.full(net.n_load, (g - len(S_G)) / net.n_load)
    M = np.vstack([L, np.eye(1, n)])
    theta = np.linalg.lstsq(M, np.concatenate([sg, -load, [0.0]]), rcond=None)[0]
    p = BCt @ theta
    big = np.abs(p).max(initial=0.0) + 1.0
    p_max, p_min = np.full(e, big), np.full(e, -big)
    sides = {}
    for k in S_B:
        if p[k] >= 0:
            p_max[k], sides[k] = p[k], UPPER
        else:
            p_min[k], sides[k] = p[k], LOWER
    limits = CapacityLimits(np.full(g, 2.0), np.zeros(g), p_max, p_min)

    lp = assemble_lp(net, np.ones(g), limits, load)
    target_g = tuple((i, LOWER) for i in S_G)
    target_b = tuple(sorted((k, sides[k]) for k in S_B))
    rows = [2 * e + g + i for i in S_G] + [k if sides[k] == UPPER else e + k for k in S_B]
    A_B = lp.A_in[rows]
    rng = np.random.default_rng(seed)
    for attempt in range(retries + 1):
        w = np.ones(len(rows)) if attempt == 0 else rng.uniform(0.1, 1.0, len(rows))
        y_eq = np.linalg.lstsq(lp.A_eq[:, g:].T, -(A_B[:, g:].T @ w), rcond=None)[0]
        fp = -(lp.A_eq[:, :g].T @ y_eq + A_B[:, :g].T @ w)
        f = fp + np.abs(fp).max(initial=0.0)
        if g == 1 or not np.any(f > 0):
            f = f + 1.0
        model = OPFModel(net, f, limits)
        sol = model.solve(load)
        if not sol.optimal:
            continue
        bs = detect_binding(sol, tol=tol, rank_tol=rank_tol)
        if bs.gens == target_g and bs.branches == target_b \
                and uniqueness_probe(sol.lp, sol, seed=seed) == UNIQUE:
            return Construction(f, limits, load, bs, attempt + 1)
    raise ConstructionFailed(f"could not certify a unique optimum for S_G={S_G}, S_B={S_B}")


def _resolve_case(case):
    if isinstance(case, CaseFile):
        return case
    if case is None:
        return bundled_case()
    if isinstance(case, (str, Path)):
        if Path(case).suffix == "" and not Path(case).exists():
            return bundled_case(str(case))
        return load_case(case)
    raise TypeError(f"cannot interpret {type(case).__name__} as a case")


class OPFOperator(TransformerMixin, BaseEstimator):
    """Scikit-learn style wrapper around the OPF operator.

    ``fit`` only reads the case; ``transform`` (and ``predict``) maps rows of
    loads to rows of optimal generation.  Infeasible rows raise by default or
    come back as NaN with ``on_infeasible="nan"``.

    Parameters
    ----------
    case : CaseFile, path, or bundled case name, default "case9"
    binding_tol, rank_tol : float
    check_unique : bool
        Run the uniqueness probe on every row.
    on_infeasible : {"raise", "nan"}
    seed : int
    """

    def __init__(self, case=None, binding_tol=BINDING_TOL, rank_tol=RANK_TOL,
                 check_unique=False, on_infeasible="raise", pivot_tol=1e-9, seed=0):
        self.case = case
        self.binding_tol = binding_tol
        self.rank_tol = rank_tol
        self.check_unique = check_unique
        self.on_infeasible = on_infeasible
        self.pivot_tol = pivot_tol
        self.seed = seed

    def fit(self, X=None, y=None):
        if self.on_infeasible not in ("raise", "nan"):
            raise ValueError(f"on_infeasible must be 'raise' or 'nan', got {self.on_infeasible!r}")
        case = _resolve_case(self.case)
        self.case_ = case
        self.model_ = OPFModel(case.network, case.cost, case.limits, pivot_tol=self.pivot_tol)
        self.n_features_in_ = case.network.n_load
        self.n_outputs_ = case.network.n_gen
        if X is not None:
            self._validate(X)
        return self

    def _validate(self, X):
        X = check_array(X, dtype=float, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} columns, expected {self.n_features_in_} loads")
        return X

    def _rows(self, X):
        check_is_fitted(self, "model_")
        X = self._validate(X)
        for x in X:
            try:
                sg, bs = evaluate(self.model_, x, tol=self.binding_tol, rank_tol=self.rank_tol,
                                  check_unique=self.check_unique, seed=self.seed)
            except InfeasibleError:
                if self.on_infeasible == "raise":
                    raise
                sg, bs = None, None
            yield x, sg, bs

    def transform(self, X):
        out = np.full((len(X), self.n_outputs_) if hasattr(self, "n_outputs_") else (0, 0), np.nan)
        for k, (_, sg, _) in enumerate(self._rows(X)):
            if sg is not None:
                out[k] = sg
        return out

    def predict(self, X):
        return self.transform(X)

    def binding_sets(self, X):
        return [bs for _, _, bs in self._rows(X)]

    def jacobian(self, X):
        """Closed-form Jacobians, shape ``(n_samples, n_gen, n_load)``; NaN where undefined."""
        net = self.case_.network if hasattr(self, "case_") else None
        out = []
        for _, sg, bs in self._rows(X):
            J = np.full((self.n_outputs_, self.n_features_in_), np.nan)
            if bs is not None and bs.count == net.n_gen - 1:
                try:
                    J = closed_form_jacobian(net, bs.S_G, bs.S_B, self.rank_tol).J
                except DependentSets:
                    pass
            out.append(J)
        return np.array(out).reshape(-1, self.n_outputs_, self.n_features_in_)

    def regularity(self, X):
        check_is_fitted(self, "model_")
        X = self._validate(X)
        return [regularity_of(_solve_or_raise(self.model_, x), tol=self.binding_tol,
                              rank_tol=self.rank_tol) for x in X]
