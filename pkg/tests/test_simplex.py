import numpy as np
import pytest

from conftest import random_milp
from milpbranch.milp import SolveStatus, parse_instance
from milpbranch.simplex import BasisStatus, LpRelaxation, dual_objective_check, solve_lp


def test_half_knapsack_lp():
    inst = parse_instance("min -x0 - x1 ; r: x0 + x1 <= 1.5 ; bounds x0 0 1 ; bounds x1 0 1")
    rel = LpRelaxation.root(inst)
    sol = solve_lp(rel)
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(-1.5, abs=1e-12)
    assert BasisStatus.AT_UPPER in set(sol.basis_status.tolist())
    assert dual_objective_check(sol, rel) <= 1e-9


def test_infeasible_lp():
    inst = parse_instance("min x0 ; r: x0 >= 3 ; bounds x0 0 1")
    assert solve_lp(LpRelaxation.root(inst)).status == SolveStatus.INFEASIBLE


def test_unbounded_lp():
    inst = parse_instance("vars 1\nmin -x0\n")
    assert solve_lp(LpRelaxation.root(inst)).status == SolveStatus.UNBOUNDED


def test_degenerate_duplicated_row():
    inst = parse_instance("min -x0 - 2 x1 ; a: x0 + x1 <= 1 ; b: x0 + x1 <= 1 ; c: x0 <= 1 ; bounds x1 0 0.5")
    rel = LpRelaxation.root(inst)
    sol = solve_lp(rel)
    assert sol.objective == pytest.approx(-1.5)
    assert dual_objective_check(sol, rel) <= 1e-6


def test_iteration_limit():
    inst = parse_instance("min -x0 - x1 ; r: x0 + x1 <= 1.5 ; s: x0 - x1 >= -1 ; bounds x0 0 1 ; bounds x1 0 1")
    assert solve_lp(LpRelaxation.root(inst), max_pivots=0).status == SolveStatus.LIMIT_REACHED


def test_local_bounds_must_nest():
    inst = parse_instance("min x0 ; bounds x0 0 1")
    with pytest.raises(ValueError):
        LpRelaxation(inst, np.array([-1.0]), np.array([1.0]))


def test_random_lps_kkt_and_feasibility():
    rng = np.random.default_rng(0)
    checked = 0
    for k in range(150):
        inst = random_milp(rng)
        rel = LpRelaxation.root(inst)
        sol = solve_lp(rel)
        if sol.status != SolveStatus.OPTIMAL:
            continue
        checked += 1
        assert np.all(inst.A @ sol.x <= inst.b + 1e-6)
        assert np.all(sol.x >= inst.lower - 1e-9) and np.all(sol.x <= inst.upper + 1e-9)
        assert sol.objective == pytest.approx(inst.c @ sol.x, abs=1e-6)
        assert dual_objective_check(sol, rel) <= 1e-6
        assert np.all(sol.duals <= 1e-9)
        # reduced costs point the right way at the active bounds
        lower_ok = sol.reduced_costs[sol.basis_status == BasisStatus.AT_LOWER] >= -1e-6
        upper_ok = sol.reduced_costs[sol.basis_status == BasisStatus.AT_UPPER] <= 1e-6
        assert lower_ok.all() and upper_ok.all()
    assert checked > 50


def test_agrees_with_scipy_highs():
    from scipy.optimize import linprog
    rng = np.random.default_rng(1)
    for _ in range(80):
        inst = random_milp(rng)
        sol = solve_lp(LpRelaxation.root(inst))
        ref = linprog(inst.c, A_ub=inst.A, b_ub=inst.b, bounds=list(zip(inst.lower, inst.upper)),
                      method="highs")
        if ref.status == 2:
            assert sol.status == SolveStatus.INFEASIBLE
        else:
            assert sol.status == SolveStatus.OPTIMAL
            assert sol.objective == pytest.approx(ref.fun, abs=1e-6)


def test_tightening_never_lowers_bound():
    rng = np.random.default_rng(2)
    for _ in range(60):
        inst = random_milp(rng, n_cont=1)
        root = solve_lp(LpRelaxation.root(inst))
        if root.status != SolveStatus.OPTIMAL:
            continue
        j = int(rng.integers(inst.n))
        upper = np.array(inst.upper)
        upper[j] = inst.lower[j] + (inst.upper[j] - inst.lower[j]) * rng.random()
        child = solve_lp(LpRelaxation(inst, np.array(inst.lower), upper))
        if child.status == SolveStatus.OPTIMAL:
            assert child.objective >= root.objective - 1e-9


def test_deterministic():
    rng = np.random.default_rng(3)
    inst = random_milp(rng, n_int=4, n_cont=2, m=4)
    a = solve_lp(LpRelaxation.root(inst))
    b = solve_lp(LpRelaxation.root(inst))
    assert a.status == b.status
    for f in ("x", "duals", "reduced_costs", "basis_status"):
        assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True)


def test_free_variable():
    inst = parse_instance("min x0 + x1 ; a: -x0 <= 2 ; b: x0 - x1 <= 0 ; bounds x0 -inf inf ; bounds x1 -inf inf")
    rel = LpRelaxation.root(inst)
    sol = solve_lp(rel)
    assert sol.status == SolveStatus.OPTIMAL
    assert sol.objective == pytest.approx(-4.0)
    assert dual_objective_check(sol, rel) <= 1e-6
