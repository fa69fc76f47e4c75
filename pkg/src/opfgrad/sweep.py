"""Binding-set region maps over two-dimensional slices, and load-path traces.

Cell labels are ``Infeasible``, ``Degenerate`` or a region identified by the
canonical binding-set key.  Regions are classified by how many generators
and branches bind (TwoGens, GenBranch, TwoBranches for three generators).
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DependentSets, DimensionError
from .jacobian import closed_form_jacobian
from .lp import BINDING_TOL, RANK_TOL, OPFModel, as_model, detect_binding
from .network import flow_matrix, laplacian
from .opf_operator import regularity_of
from .simplex import OPTIMAL, revised_simplex

INFEASIBLE = "Infeasible"
DEGENERATE = "Degenerate"
REGION = "Region"

AREA_FILTER = 1e-3
LOAD_EPS = 1e-9

_STATUS_CODE = {INFEASIBLE: 0, REGION: 1, DEGENERATE: 2}


def classify(bs):
    ng, nb = len(bs.gens), len(bs.branches)
    names = {(2, 0): "TwoGens", (1, 1): "GenBranch", (0, 2): "TwoBranches",
             (1, 0): "Gen", (0, 1): "Branch", (0, 0): "Interior"}
    return names.get((ng, nb), f"{ng}Gens{nb}Branches")


@dataclass(eq=False)
class RegionInfo:
    key: str
    binding: object
    cls: str
    cells: int = 0
    area_fraction: float = 0.0
    jacobian: np.ndarray = None

    def as_dict(self, net=None):
        return {"hash": self.key, "class": self.cls, "cells": self.cells,
                "area_fraction": self.area_fraction, "binding": self.binding.as_dict(net),
                "jacobian": None if self.jacobian is None else self.jacobian.tolist()}


@dataclass(eq=False)
class RegionGrid:
    """Labelled grid; ``status[iy, ix]`` and ``region[iy, ix]`` index cells."""

    axis_names: tuple
    xs: np.ndarray
    ys: np.ndarray
    status: np.ndarray
    region: np.ndarray
    regions: list
    network: object = field(default=None, repr=False)

    @property
    def shape(self):
        return self.status.shape

    @property
    def feasible_cells(self):
        return int(np.count_nonzero(self.status != _STATUS_CODE[INFEASIBLE]))

    @property
    def degenerate_fraction(self):
        f = self.feasible_cells
        return 0.0 if f == 0 else float(np.count_nonzero(self.status == _STATUS_CODE[DEGENERATE]) / f)

    def major_regions(self, min_fraction=AREA_FILTER):
        return [r for r in self.regions if r.area_fraction >= min_fraction]

    def n_regions(self, min_fraction=AREA_FILTER):
        return len(self.major_regions(min_fraction))

    def label(self, iy, ix):
        code = self.status[iy, ix]
        if code == _STATUS_CODE[REGION]:
            return self.regions[self.region[iy, ix]].key
        return INFEASIBLE if code == 0 else DEGENERATE

    def cell_class(self, iy, ix):
        if self.status[iy, ix] != _STATUS_CODE[REGION]:
            return ""
        return self.regions[self.region[iy, ix]].cls

    def fingerprint(self):
        """Order-independent digest of every cell label."""
        import hashlib
        h = hashlib.sha256()
        for iy in range(self.shape[0]):
            for ix in range(self.shape[1]):
                h.update(self.label(iy, ix).encode())
                h.update(b";")
        return h.hexdigest()

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y", "status", "region_hash", "class"])
        names = {v: k for k, v in _STATUS_CODE.items()}
        for iy, y in enumerate(self.ys):
            for ix, x in enumerate(self.xs):
                code = int(self.status[iy, ix])
                key = self.regions[self.region[iy, ix]].key if code == 1 else ""
                w.writerow([repr(float(x)), repr(float(y)), names[code], key, self.cell_class(iy, ix)])
        return buf.getvalue()

    def summary(self, min_fraction=AREA_FILTER):
        return {
            "axes": list(self.axis_names),
            "x_range": [float(self.xs[0]), float(self.xs[-1])],
            "y_range": [float(self.ys[0]), float(self.ys[-1])],
            "resolution": [len(self.xs), len(self.ys)],
            "feasible_cells": self.feasible_cells,
            "degenerate_fraction": self.degenerate_fraction,
            "area_filter": min_fraction,
            "n_regions": self.n_regions(min_fraction),
            "regions": [r.as_dict(self.network) for r in self.regions],
        }

    def to_json(self, min_fraction=AREA_FILTER):
        return json.dumps(self.summary(min_fraction), indent=2)


def _grid_axis(rng, res):
    lo, hi = map(float, rng)
    if not hi > lo:
        raise DimensionError(f"range must be increasing, got {rng}")
    return np.linspace(lo, hi, int(res))


def _resolution(resolution):
    if np.isscalar(resolution):
        return int(resolution), int(resolution)
    return tuple(int(r) for r in resolution)


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def _assemble_grid(names, xs, ys, labels, net, rank_tol):
    """Turn per-cell (status, binding) labels into a RegionGrid."""
    ny, nx = len(ys), len(xs)
    status = np.zeros((ny, nx), dtype=np.int8)
    region = np.full((ny, nx), -1, dtype=np.int32)
    index, regions = {}, []
    for k, (st, bs) in enumerate(labels):
        iy, ix = divmod(k, nx)
        status[iy, ix] = _STATUS_CODE[st]
        if st == REGION:
            key = bs.key()
            if key not in index:
                index[key] = len(regions)
                regions.append(RegionInfo(key, bs, classify(bs)))
            region[iy, ix] = index[key]
            regions[index[key]].cells += 1
    feasible = int(np.count_nonzero(status != 0))
    # sort by key so region numbering does not depend on scan order
    order = sorted(range(len(regions)), key=lambda i: regions[i].key)
    remap = np.empty(len(regions), dtype=np.int32)
    for new, old in enumerate(order):
        remap[old] = new
    regions = [regions[i] for i in order]
    if regions:
        region = np.where(region >= 0, remap[np.maximum(region, 0)], -1)
    for r in regions:
        r.area_fraction = r.cells / feasible if feasible else 0.0
        try:
            r.jacobian = closed_form_jacobian(net, r.binding.S_G, r.binding.S_B, rank_tol).J
        except (DependentSets, DimensionError):
            r.jacobian = None
    return RegionGrid(names, xs, ys, status, region, regions, net)


def label_solution(sol, *, tol=BINDING_TOL, rank_tol=RANK_TOL):
    """(status, BindingSet) for one solved cell."""
    if not sol.optimal:
        return INFEASIBLE, None
    bs = detect_binding(sol, tol=tol, rank_tol=rank_tol)
    rep = regularity_of(sol, tol=tol, rank_tol=rank_tol, binding=bs)
    if rep.binding_count != rep.expected or not rep.rank_ok:
        return DEGENERATE, bs
    return REGION, bs


def scan_load_plane(ctx, fixed_loads, axes, ranges, resolution=200, *, tol=BINDING_TOL,
                    rank_tol=RANK_TOL, threads=1):
    """Label a grid over two load buses; other loads stay at ``fixed_loads``.

    ``axes`` are 1-based bus numbers.  Cells with a nonpositive load lie
    outside the operator's domain and are labelled Infeasible.
    """
    model = as_model(ctx)
    net = model.network
    base = np.array(fixed_loads, dtype=float)
    if base.shape != (net.n_load,):
        raise DimensionError(f"fixed_loads must have length {net.n_load}")
    ja, jb = (int(a) - net.n_gen - 1 for a in axes)
    if not (0 <= ja < net.n_load and 0 <= jb < net.n_load) or ja == jb:
        raise DimensionError(f"axes {axes} must be two distinct load buses")
    nx, ny = _resolution(resolution)
    xs, ys = _grid_axis(ranges[0], nx), _grid_axis(ranges[1], ny)

    def cell(k):
        iy, ix = divmod(k, nx)
        sl = base.copy()
        sl[ja], sl[jb] = xs[ix], ys[iy]
        if sl[ja] <= 0 or sl[jb] <= 0:
            return INFEASIBLE, None
        return label_solution(model.solve(sl), tol=tol, rank_tol=rank_tol)

    labels = _map(cell, range(nx * ny), threads)
    return _assemble_grid((f"bus{axes[0]}", f"bus{axes[1]}"), xs, ys, labels, net, rank_tol)


class LoadPolytope:
    """Loads servable under given limits, with some coordinates held fixed.

    Built as one LP over ``(sg, theta, p, sl_free)`` with bounds on every
    variable; ``free`` lists the 0-based load positions allowed to move.
    """

    def __init__(self, net, limits, base_load, free=None, eps=LOAD_EPS):
        self.net, self.limits = net, limits
        g, n, e = net.n_gen, net.n_bus, net.n_edge
        self.base = np.array(base_load, dtype=float)
        self.free = list(range(net.n_load)) if free is None else [int(j) for j in free]
        F = len(self.free)
        L, BCt = laplacian(net), flow_matrix(net)
        nv = g + n + e + F
        A = np.zeros((1 + n + e, nv))
        A[0, g] = 1.0
        A[1:1 + n, :g] = -np.eye(n, g)
        A[1:1 + n, g:g + n] = L
        for k, j in enumerate(self.free):
            A[1 + g + j, g + n + e + k] = 1.0
        A[1 + n:, g:g + n] = -BCt
        A[1 + n:, g + n:g + n + e] = np.eye(e)
        rhs = np.zeros(1 + n + e)
        fixed = np.setdiff1d(np.arange(net.n_load), self.free)
        rhs[1 + g + fixed] = -self.base[fixed]
        lo = np.concatenate([limits.sg_min, np.full(n, -np.inf), limits.p_min, np.full(F, eps)])
        hi = np.concatenate([limits.sg_max, np.full(n, np.inf), limits.p_max, np.full(F, np.inf)])
        self._A, self._b, self._lo, self._hi = A, rhs, lo, hi
        self._nv = nv

    def _solve(self, direction):
        c = np.zeros(self._nv)
        c[self._nv - len(self.free):] = direction
        return revised_simplex(self._A, self._b, c, self._lo, self._hi)

    def feasible(self):
        if np.any(self.limits.p_max <= self.limits.p_min):
            return False
        return self._solve(np.zeros(len(self.free))).status == OPTIMAL

    def vertex(self, direction):
        """Free-load coordinates of the point maximising ``direction``."""
        res = self._solve(-np.asarray(direction, dtype=float))
        if res.status != OPTIMAL:
            return None
        return res.x[self._nv - len(self.free):]

    def full_load(self, free_values):
        sl = self.base.copy()
        sl[self.free] = free_values
        return sl

    def sample(self, k, rng, n_directions=None):
        """``k`` strictly positive feasible loads as random convex combinations of vertices."""
        F = len(self.free)
        n_dir = n_directions or max(2 * F + 2, 8)
        dirs = list(np.eye(F)) + list(-np.eye(F))
        dirs += list(rng.standard_normal((max(n_dir - 2 * F, 0), F)))
        verts = [v for v in (self.vertex(d) for d in dirs) if v is not None]
        if not verts:
            return np.empty((0, self.net.n_load))
        V = np.array(verts)
        w = rng.dirichlet(np.ones(len(V)), size=k)
        return np.array([self.full_load(x) for x in w @ V])


def scan_limit_plane(ctx, load_spec, branch_e, lower_range, upper_range, resolution=20, *,
                     samples=64, degenerate_share=0.05, tol=BINDING_TOL, rank_tol=RANK_TOL,
                     seed=0, threads=1):
    """Label a grid over ``(p_min[e], p_max[e])`` of one branch.

    ``load_spec`` is ``(base_load, free_positions)``: the free load positions
    (0-based; None means all) are sampled, the rest stay at ``base_load``.
    A cell is Infeasible when no positive load is servable, Degenerate when
    more than ``degenerate_share`` of ``samples`` random feasible loads fail
    the regularity check, and otherwise labelled with the binding set found
    at the mean of its samples.
    """
    model = as_model(ctx)
    net, f, limits = model.ctx
    base, free = load_spec
    e = int(branch_e)
    nx, ny = _resolution(resolution)
    xs, ys = _grid_axis(lower_range, nx), _grid_axis(upper_range, ny)

    def cell(k):
        iy, ix = divmod(k, nx)
        status, bs = probe_limit_point(net, f, limits, base, free, e, xs[ix], ys[iy],
                                       samples=samples, degenerate_share=degenerate_share,
                                       tol=tol, rank_tol=rank_tol, seed=(seed, k))
        return status, bs

    labels = _map(cell, range(nx * ny), threads)
    return _assemble_grid((f"p_min[{e + 1}]", f"p_max[{e + 1}]"), xs, ys, labels, net, rank_tol)


def probe_limit_point(net, f, limits, base, free, e, p_lo, p_hi, *, samples=64,
                      degenerate_share=0.05, tol=BINDING_TOL, rank_tol=RANK_TOL, seed=0):
    """Classify one ``(p_min[e], p_max[e])`` setting; returns (status, BindingSet)."""
    if not p_hi > p_lo:
        return INFEASIBLE, None
    pmax, pmin = limits.p_max.copy(), limits.p_min.copy()
    pmax[e], pmin[e] = p_hi, p_lo
    lim = limits.replace(p_max=pmax, p_min=pmin)
    poly = LoadPolytope(net, lim, base, free)
    if not poly.feasible():
        return INFEASIBLE, None
    rng = np.random.default_rng(seed if not isinstance(seed, tuple) else list(seed))
    loads = poly.sample(samples, rng)
    model = OPFModel(net, f, lim)
    fails = 0
    for sl in loads:
        st, _ = label_solution(model.solve(sl, check=False), tol=tol, rank_tol=rank_tol)
        fails += st != REGION
    if fails > degenerate_share * len(loads):
        return DEGENERATE, None
    return label_solution(model.solve(loads.mean(axis=0), check=False), tol=tol, rank_tol=rank_tol)


def degenerate_share_at(ctx, load_spec, e, p_lo, p_hi, samples=1000, *, tol=BINDING_TOL,
                        rank_tol=RANK_TOL, seed=0):
    """Fraction of sampled feasible loads failing the regularity check."""
    model = as_model(ctx)
    net, f, limits = model.ctx
    pmax, pmin = limits.p_max.copy(), limits.p_min.copy()
    pmax[e], pmin[e] = p_hi, p_lo
    lim = limits.replace(p_max=pmax, p_min=pmin)
    poly = LoadPolytope(net, lim, *load_spec)
    loads = poly.sample(samples, np.random.default_rng(seed))
    m = OPFModel(net, f, lim)
    bad = sum(label_solution(m.solve(sl, check=False), tol=tol, rank_tol=rank_tol)[0] != REGION
              for sl in loads)
    return bad / max(len(loads), 1)


def sample_uniform_loads(ctx, k, seed=0, max_draws=None):
    """``k`` loads drawn uniformly from the feasible load set.

    Draws uniformly from the simplex ``{sl > 0, sum(sl) <= sum(sg_max)}``
    and keeps the draws the OPF can serve.
    """
    model = as_model(ctx)
    net, _, limits = model.ctx
    rng = np.random.default_rng(seed)
    total = float(limits.sg_max.sum())
    max_draws = max_draws or 1000 * k
    out, draws = [], 0
    while len(out) < k and draws < max_draws:
        batch = rng.dirichlet(np.ones(net.n_load + 1), size=min(4 * k, 4096))[:, :-1] * total
        for sl in batch:
            draws += 1
            if np.all(sl > 0) and model.solve(sl).optimal:
                out.append(sl)
                if len(out) == k:
                    break
    return np.array(out)


@dataclass(eq=False)
class PathSample:
    t: float
    load: np.ndarray
    sg: np.ndarray
    objective: float
    key: str
    binding: object = None


@dataclass(eq=False)
class PathTrace:
    samples: list
    changes: list

    def segments(self):
        """Index ranges ``[start, stop)`` of constant binding set."""
        cuts = [0] + list(self.changes) + [len(self.samples)]
        return [(a, b) for a, b in zip(cuts[:-1], cuts[1:])]

    def fit_residuals(self):
        """Max deviation of ``sg`` from a straight-line fit in ``t`` per segment."""
        out = []
        for a, b in self.segments():
            if b - a < 2:
                out.append(0.0)
                continue
            t = np.array([s.t for s in self.samples[a:b]])
            Y = np.array([s.sg for s in self.samples[a:b]])
            X = np.column_stack([np.ones_like(t), t])
            coef = np.linalg.lstsq(X, Y, rcond=None)[0]
            out.append(float(np.abs(X @ coef - Y).max()))
        return out

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        s0 = self.samples[0]
        w.writerow(["t"] + [f"load{j + 1}" for j in range(len(s0.load))]
                   + [f"sg{i + 1}" for i in range(len(s0.sg))] + ["objective", "region_hash"])
        for s in self.samples:
            w.writerow([repr(s.t)] + [repr(float(v)) for v in s.load]
                       + [repr(float(v)) for v in s.sg] + [repr(s.objective), s.key])
        return buf.getvalue()

    def as_dict(self):
        return {"changes": list(self.changes),
                "samples": [{"t": s.t, "load": s.load.tolist(), "sg": s.sg.tolist(),
                             "objective": s.objective, "region_hash": s.key}
                            for s in self.samples]}


def trace_load_path(ctx, waypoints, samples=50, *, tol=BINDING_TOL, rank_tol=RANK_TOL):
    """Solve along the polyline through ``waypoints``, evenly spaced in arc length.

    Region-change indices are the samples whose binding set differs from the
    previous sample's.
    """
    model = as_model(ctx)
    W = np.atleast_2d(np.asarray(waypoints, dtype=float))
    if W.shape[1] != model.network.n_load:
        raise DimensionError(f"waypoints must have {model.network.n_load} columns")
    seg = np.linalg.norm(np.diff(W, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    ts = np.linspace(0.0, 1.0, samples)
    out = []
    for t in ts:
        if total == 0:
            sl = W[0].copy()
        else:
            s = t * total
            k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
            r = 0.0 if seg[k] == 0 else (s - cum[k]) / seg[k]
            sl = W[k] + r * (W[k + 1] - W[k])
        sol = model.solve(sl)
        if sol.optimal:
            bs = detect_binding(sol, tol=tol, rank_tol=rank_tol)
            out.append(PathSample(float(t), sl, sol.sg, sol.objective, bs.key(), bs))
        else:
            nan = np.full(model.network.n_gen, np.nan)
            out.append(PathSample(float(t), sl, nan, float("nan"), INFEASIBLE))
    changes = [k for k in range(1, len(out)) if out[k].key != out[k - 1].key]
    return PathTrace(out, changes)
