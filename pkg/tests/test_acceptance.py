"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import time
import warnings

import numpy as np
import pytest

from opfgrad.conic import (NONNEG, ZERO, ConicProblem, PerturbationTriple, assemble_Q,
                           conic_jacobian, embed_lp_solution, project_C, project_polar_C,
                           solution_map_derivative)
from opfgrad.exceptions import InfeasibleError, RegionBoundary
from opfgrad.jacobian import (closed_form_jacobian, combo_jacobians, enumerate_binding_combos,
                              fd_jacobian, worst_case_table)
from opfgrad.lp import OPFModel, detect_binding, kkt_residuals, solve_opf
from opfgrad.network import CapacityLimits
from opfgrad.opf_operator import construct_parameters_for_binding, regularity_report
from opfgrad.sweep import REGION, label_solution, sample_uniform_loads, scan_load_plane, \
    trace_load_path

from nets import BLACK, EDGE_2_8, four_bus, random_instance, with_branch_limits

PLANE = ((0.0, 6.0), (0.0, 6.0))


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def red_map(case9):
    t0 = time.perf_counter()
    grid = scan_load_plane(case9.ctx, case9.load, (4, 7), PLANE, 200)
    return grid, time.perf_counter() - t0


def test_criterion_1_regularity(case9, report):
    t0 = time.perf_counter()
    loads = sample_uniform_loads(case9.ctx, 1000, seed=1)
    model = OPFModel(*case9.ctx)
    regular = sum(regularity_report(model, sl).regular for sl in loads)
    dt = time.perf_counter() - t0
    frac = regular / len(loads)
    report(1, len(loads) == 1000 and frac >= 0.99 and dt < 30,
           f"{regular}/{len(loads)} regular ({frac:.3%}), {dt:.1f} s")


def test_criterion_2_seven_regions(red_map, report):
    grid, dt = red_map
    major = grid.major_regions()
    classes = sorted({r.cls for r in major})
    border = np.concatenate([grid.status[0], grid.status[-1], grid.status[:, 0], grid.status[:, -1]])
    ok = (len(major) == 7 and {"TwoGens", "GenBranch", "TwoBranches"} <= set(classes) and dt < 60)
    report(2, ok, f"{len(major)} regions {classes}, {len(grid.regions)} before filter, "
                  f"infeasible border cells {np.count_nonzero(border == 0)}/{border.size}, {dt:.1f} s")


def test_criterion_3_degenerate_slice(case9, report):
    black = with_branch_limits(case9, EDGE_2_8, *BLACK)
    grid = scan_load_plane(black, case9.load, (4, 7), PLANE, 200)
    frac = grid.degenerate_fraction
    report(3, frac > 0.01, f"degenerate fraction {frac:.3%} of {grid.feasible_cells} feasible cells")


def test_criterion_4_three_engines(case9, report):
    t0 = time.perf_counter()
    model = OPFModel(*case9.ctx)
    pool = sample_uniform_loads(case9.ctx, 200, seed=4)
    worst, used, regions = 0.0, 0, set()
    for sl in pool:
        try:
            fd = fd_jacobian(model, sl)
        except RegionBoundary:
            continue
        status, bs = label_solution(model.solve(sl))
        if status != REGION:
            continue
        cf = closed_form_jacobian(case9.network, bs.S_G, bs.S_B).J
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            cj = conic_jacobian(model, sl).J
        worst = max(worst, np.abs(cf - fd.J).max(), np.abs(cf - cj).max(), np.abs(fd.J - cj).max())
        regions.add(bs.key())
        used += 1
        if used == 25:
            break
    dt = time.perf_counter() - t0
    report(4, used == 25 and worst <= 1e-6 and dt < 10,
           f"{used} points over {len(regions)} regions, max disagreement {worst:.2e}, {dt:.1f} s")


def test_criterion_5_conservation(case9, report):
    pairs = combo_jacobians(case9.network)
    cons = max(np.abs(J.sum(axis=0) - 1).max() for _, J in pairs)
    zero = max((np.abs(J[list(c.S_G)]).max() for c, J in pairs if c.S_G), default=0.0)
    report(5, len(pairs) == 60 and cons <= 1e-9 and zero <= 1e-12,
           f"{len(pairs)} independent combos, max |1'J - 1| {cons:.1e}, max S_G row {zero:.1e}")


def _random_four_bus(net, rng):
    g = net.n_gen
    f = rng.uniform(0.1, 2.0, g)
    sg_min = rng.uniform(0.0, 0.5, g)
    sg_max = sg_min + rng.uniform(0.2, 2.0, g)
    lim = CapacityLimits(sg_max, sg_min, rng.uniform(0.05, 2.0, net.n_edge),
                         -rng.uniform(0.05, 2.0, net.n_edge))
    load = rng.uniform(0.05, 1.0, net.n_load) * rng.uniform(0.3, 1.0) * sg_max.sum() / 2
    return f, lim, load


def test_criterion_6_range_equivalence(report):
    net = four_bus().network
    combos = enumerate_binding_combos(net)
    pairs = combo_jacobians(net, combos)
    Js = np.array([J for _, J in pairs])
    rng = np.random.default_rng(6)
    hits, worst, realised = 0, 0.0, set()
    for _ in range(10_000):
        f, lim, load = _random_four_bus(net, rng)
        model = OPFModel(net, f, lim)
        sol = model.solve(load)
        if not sol.optimal or label_solution(sol)[0] != REGION:
            continue
        try:
            fd = fd_jacobian(model, load).J
        except (RegionBoundary, InfeasibleError):
            continue
        d = np.abs(Js - fd).max(axis=(1, 2))
        k = int(np.argmin(d))
        worst = max(worst, d[k])
        realised.add(k)
        hits += 1
    constructed = 0
    for c in combos:
        if not c.independent:
            continue
        con = construct_parameters_for_binding(net, c.S_G, c.S_B, seed=0)
        bs = detect_binding(solve_opf(net, con.cost, con.limits, con.load))
        constructed += bs.S_G == c.S_G and tuple(sorted(bs.S_B)) == c.S_B
    ok = hits > 0 and worst <= 1e-6 and constructed == len(pairs)
    report(6, ok, f"{hits} regular samples of 10000, max distance {worst:.1e}, "
                  f"{len(realised)}/{len(pairs)} combos hit by sampling, "
                  f"{constructed}/{len(pairs)} constructed")


def test_criterion_7_constructive_worst_case(case9, report):
    net = case9.network
    worst, n = 0.0, 0
    for i, j, v, c in worst_case_table(net):
        con = construct_parameters_for_binding(net, c.S_G, c.S_B, seed=0)
        fd = fd_jacobian((net, con.cost, con.limits), con.load).J
        worst = max(worst, abs(abs(fd[i, j]) - v))
        n += 1
    report(7, n == 18 and worst <= 1e-6, f"{n} pairs, max |FD - worst case| {worst:.1e}")


def test_criterion_8_conic_sanity(case9, report):
    sol = solve_opf(*case9.ctx, case9.load)
    p, pt = embed_lp_solution(sol.lp, sol)
    d = solution_map_derivative(p, pt, PerturbationTriple(db=np.zeros(p.m)))
    zero = not (d.dx.any() or d.dy.any() or d.ds.any())
    rng = np.random.default_rng(8)
    skew = True
    for _ in range(20):
        m, n = int(rng.integers(1, 10)), int(rng.integers(1, 10))
        q = ConicProblem(rng.normal(size=(m, n)), rng.normal(size=m), rng.normal(size=n),
                         ((NONNEG, m),))
        Q = assemble_Q(q)
        skew &= bool(np.array_equal(Q, -Q.T))
    Q9 = assemble_Q(p)
    skew &= bool(np.array_equal(Q9, -Q9.T))
    worst = 0.0
    configs = [((ZERO, 3), (NONNEG, 5)), ((NONNEG, 6),), p.cones]
    for cones in configs:
        m = sum(k for _, k in cones)
        Z = rng.normal(size=(10_000, 4 + m + 1)) * rng.choice([1e-3, 1.0, 1e3], size=(10_000, 1))
        for z in Z:
            r = np.abs(project_C(z, 4, cones) + project_polar_C(z, 4, cones) - z).max()
            worst = max(worst, r)
    report(8, zero and skew and worst <= 1e-12,
           f"zero perturbation exact: {zero}, Q skew exact: {skew}, "
           f"Moreau residual {worst:.1e} over 3x10000 points")


def test_criterion_9_kkt(report):
    rng = np.random.default_rng(9)
    n, worst, gap, tried = 0, 0.0, 0.0, 0
    while n < 200:
        tried += 1
        net, f, lim, load = random_instance(rng)
        sol = solve_opf(net, f, lim, load)
        if not sol.optimal:
            continue
        r = kkt_residuals(sol)
        worst = max(worst, r.max())
        gap = max(gap, r.duality_gap)
        n += 1
    report(9, worst <= 1e-8 and gap <= 1e-8,
           f"{n} optimal instances ({tried} drawn), max residual {worst:.1e}, max gap {gap:.1e}")


def _region_centroids(grid):
    out = []
    for k, r in enumerate(grid.regions):
        if r.area_fraction < 1e-3:
            continue
        iy, ix = np.argwhere(grid.region == k).mean(axis=0)
        out.append((r.key, float(np.interp(ix, np.arange(len(grid.xs)), grid.xs)),
                    float(np.interp(iy, np.arange(len(grid.ys)), grid.ys))))
    return out


def _bisect(model, a, b, ka, iters=60):
    def key(sl):
        sol = model.solve(sl)
        return detect_binding(sol).key() if sol.optimal else "Infeasible"
    for _ in range(iters):
        m = 0.5 * (a + b)
        if key(m) == ka:
            a = m
        else:
            b = m
    return a, b


def test_criterion_10_path(case9, red_map, report):
    grid, _ = red_map
    model = OPFModel(*case9.ctx)
    cents = _region_centroids(grid)
    # straight segment between two region centroids that crosses the most regions
    best = None
    for a in range(len(cents)):
        for b in range(a + 1, len(cents)):
            p0 = case9.load_with({4: cents[a][1], 7: cents[a][2]})
            p1 = case9.load_with({4: cents[b][1], 7: cents[b][2]})
            tr = trace_load_path(model, [p0, p1], samples=50)
            keys = [s.key for s in tr.samples]
            if "Infeasible" in keys:
                continue
            n = len(set(keys))
            if best is None or n > best[0]:
                best = (n, tr, cents[a][0], cents[b][0])
    n_regions, tr, ka, kb = best
    fit = max(tr.fit_residuals())
    confirmed = 0
    for k in tr.changes:
        a, b = _bisect(model, tr.samples[k - 1].load, tr.samples[k].load, tr.samples[k - 1].key)
        confirmed += np.abs(b - a).max() < 1e-9
    expected_changes = sum(1 for k in range(1, 50) if tr.samples[k].key != tr.samples[k - 1].key)
    ok = (n_regions >= 4 and fit <= 1e-8 and confirmed == len(tr.changes)
          and len(tr.changes) == expected_changes)
    report(10, ok, f"path {ka} -> {kb} crosses {n_regions} regions, changes at {tr.changes} "
                   f"({confirmed} bracketed by bisection), max fit residual {fit:.1e}")
