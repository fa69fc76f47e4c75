import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from opfgrad.exceptions import CaseError, DimensionError
from opfgrad.lp import (LOWER, MULTIPLE_SUSPECTED, UNIQUE, UPPER, assemble_lp, detect_binding,
                        kkt_residuals, multiplier_count, solution_to_dict, solve_lp, solve_opf,
                        uniqueness_probe)
from opfgrad.network import CapacityLimits
from opfgrad.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, revised_simplex

from nets import parallel_gens, random_instance, two_bus

GOLDEN_SG = np.array([0.1392, 1.68520046, 2.32559954])


# --- simplex -----------------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_simplex_matches_highs(seed):
    rng = np.random.default_rng(seed)
    m, n = int(rng.integers(1, 6)), int(rng.integers(2, 9))
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(-1, 1, n)
    b = A @ x0 if rng.random() < 0.8 else rng.normal(size=m) * 5
    lo = np.where(rng.random(n) < 0.3, -np.inf, rng.uniform(-2, -0.5, n))
    hi = np.where(rng.random(n) < 0.3, np.inf, rng.uniform(0.5, 2, n))
    c = rng.normal(size=n)
    ref = linprog(c, A_eq=A, b_eq=b, bounds=list(zip(lo, hi)), method="highs")
    res = revised_simplex(A, b, c, lo, hi)
    if ref.status == 0:
        assert res.status == OPTIMAL
        assert abs(res.objective - ref.fun) <= 1e-7 * max(1, abs(ref.fun))
        assert np.abs(A @ res.x - b).max() < 1e-8
        # duals: c - A'y vanishes on basic structural columns
        basic = res.basis[res.basis < n]
        assert np.abs(res.reduced_costs[basic]).max(initial=0) < 1e-8
    elif ref.status == 2:
        assert res.status == INFEASIBLE
    elif ref.status == 3:
        assert res.status == UNBOUNDED


def test_simplex_unbounded_and_infeasible():
    assert revised_simplex(np.array([[1.0, -1.0]]), [0.0], [-1.0, 0.0], 0, np.inf).status == UNBOUNDED
    assert revised_simplex(np.array([[1.0, 1.0]]), [-1.0], [1.0, 1.0], 0, np.inf).status == INFEASIBLE


def test_simplex_degenerate_cycling_example():
    # Beale's example cycles under textbook Dantzig pricing
    A = np.array([[0.25, -8, -1, 9, 1, 0, 0], [0.5, -12, -0.5, 3, 0, 1, 0], [0, 0, 1, 0, 0, 0, 1.0]])
    b = np.array([0, 0, 1.0])
    c = np.array([-0.75, 20, -0.5, 6, 0, 0, 0])
    res = revised_simplex(A, b, c, 0, np.inf, bland_after=1)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-1.25)


# --- assembly ----------------------------------------------------------------

def test_two_bus_blocks():
    case = two_bus()
    lp = assemble_lp(*case.ctx, case.load)
    # 2E + 2G inequality rows
    assert lp.A_eq.shape == (3, 3) and lp.A_in.shape == (4, 3)
    assert lp.b_in.tolist() == [10.0, 10.0, 10.0, -0.0]
    assert lp.b_eq.tolist() == [0.0, 0.0, -0.5]


def test_case9_blocks(case9):
    lp = assemble_lp(*case9.ctx, case9.load)
    assert lp.A_eq.shape == (10, 12) and lp.A_in.shape == (24, 12)
    assert lp.A_eq[0].tolist() == [0, 0, 0, 1] + [0] * 8
    # generator-bound rows never touch theta
    assert not np.any(lp.A_in[18:, 3:])
    assert np.linalg.matrix_rank(lp.A_eq) == 10


def test_assemble_dimension_errors(case9):
    net, f, lim = case9.ctx
    with pytest.raises(DimensionError):
        assemble_lp(net, f[:2], lim, case9.load)
    with pytest.raises(DimensionError):
        assemble_lp(net, f, lim, case9.load[:5])
    with pytest.raises(CaseError, match="load must be positive"):
        assemble_lp(net, f, lim, np.r_[0.0, case9.load[1:]])


# --- solving -------------------------------------------------------------------

def test_two_bus_balance():
    case = two_bus()
    sol = solve_opf(*case.ctx, case.load)
    assert sol.optimal
    assert sol.sg == pytest.approx([0.5])
    assert sol.objective == pytest.approx(0.5)
    assert kkt_residuals(sol).max() <= 1e-9


def test_infeasible_when_load_exceeds_capacity(case9):
    sl = np.full(6, case9.limits.sg_max.sum() / 6 + 0.1)
    assert solve_opf(*case9.ctx, sl).status == INFEASIBLE


def test_case9_golden(case9):
    sol = solve_opf(*case9.ctx, case9.load_with({4: 1.0, 7: 1.0}))
    assert sol.optimal
    assert np.allclose(sol.sg, GOLDEN_SG, atol=1e-8)
    assert sol.theta[0] == pytest.approx(0.0, abs=1e-15)
    res = kkt_residuals(sol)
    assert res.ok(1e-8) and res.duality_gap <= 1e-8
    bs = detect_binding(sol)
    assert bs.gens == ((0, LOWER),) and bs.branches == ((2, LOWER),)
    assert bs.count == 2 and bs.rank_certificate == 12
    assert bs.key() == "G[g1L]B[b3L]"
    assert uniqueness_probe(sol.lp, sol) == UNIQUE
    assert multiplier_count(sol) >= 2


def test_repeat_solve_is_bit_identical(case9):
    a = solve_opf(*case9.ctx, case9.load)
    b = solve_opf(*case9.ctx, case9.load)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.basis, b.basis)
    assert np.array_equal(a.y, b.y)


def test_perturbed_theta_primal_residual(case9):
    sol = solve_opf(*case9.ctx, case9.load)
    sol.theta = sol.theta + np.r_[0.0, np.full(8, 1e-3)] * np.arange(9)
    r = kkt_residuals(sol)
    assert 1e-4 < r.primal < 1.0


def test_interior_solution_has_empty_binding():
    case = two_bus(sg_min=0.0, sg_max=10.0, load=0.5)
    sol = solve_opf(*case.ctx, case.load)
    bs = detect_binding(sol)
    assert bs.count == 0 and bs.rank_certificate == 3
    assert multiplier_count(sol) == 0


def test_tol_zero_upper_generator():
    case = two_bus(sg_max=0.5, load=0.5)
    sol = solve_opf(*case.ctx, case.load)
    bs = detect_binding(sol, tol=0.0)
    assert bs.gens == ((0, UPPER),)


def test_uniqueness_probe_on_ties():
    tie = parallel_gens((1.0, 1.0))
    sol = solve_opf(*tie.ctx, tie.load)
    assert uniqueness_probe(sol.lp, sol) == MULTIPLE_SUSPECTED
    strict = parallel_gens((1.0, 1.0 + 1e-3))
    sol = solve_opf(*strict.ctx, strict.load)
    assert uniqueness_probe(sol.lp, sol) == UNIQUE


def test_solution_dump_field_order(case9):
    sol = solve_opf(*case9.ctx, case9.load)
    d = solution_to_dict(sol, case9.network, detect_binding(sol), kkt_residuals(sol))
    assert list(d) == ["status", "objective", "sg", "theta", "flows", "duals", "binding", "residuals"]
    assert d["binding"]["branches"][0]["name"] == "(5,6)"


@settings(max_examples=120, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_kkt_and_balance(seed):
    rng = np.random.default_rng(seed)
    net, f, lim, load = random_instance(rng)
    sol = solve_opf(net, f, lim, load)
    if not sol.optimal:
        return
    r = kkt_residuals(sol)
    assert r.ok(1e-8) and r.duality_gap <= 1e-8
    assert abs(sol.sg.sum() - load.sum()) <= 1e-10 * max(1, load.sum())
    assert detect_binding(sol).rank_certificate <= net.n_bus + 1 + detect_binding(sol).count


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), alpha=st.floats(0.1, 10.0))
def test_binding_invariant_to_susceptance_scaling(seed, alpha):
    # theta scales by 1/alpha while flows stay put, so flow limits are unchanged
    rng = np.random.default_rng(seed)
    net, f, lim, load = random_instance(rng)
    sol = solve_opf(net, f, lim, load)
    if not sol.optimal or uniqueness_probe(sol.lp, sol) != UNIQUE:
        return
    sol2 = solve_opf(net.with_susceptance(alpha * net.b), f, lim, load)
    assert np.allclose(sol2.theta, sol.theta / alpha, atol=1e-9)
    assert np.allclose(sol2.flows, sol.flows, atol=1e-9)
    assert detect_binding(sol).same_sets(detect_binding(sol2))


def test_scaling_flow_limits_with_susceptance_changes_the_problem():
    rng = np.random.default_rng(0)
    net, f, lim, load = random_instance(rng)
    assert solve_opf(net, f, lim, load).optimal
    scaled = CapacityLimits(lim.sg_max, lim.sg_min, 0.5 * lim.p_max, 0.5 * lim.p_min)
    assert solve_opf(net.with_susceptance(0.5 * net.b), f, scaled, load).status == INFEASIBLE
