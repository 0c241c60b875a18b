import numpy as np
import pytest

from milpbranch.bnb import solve_bnb
from milpbranch.branchers import make_brancher
from milpbranch.generators import (PRESETS, Family, gen_auctions, gen_cfl, gen_mis, gen_setcover, generate,
                                   generate_batch)
from milpbranch.milp import SolveStatus, brute_force_solve, serialize_instance, validate_solution


def test_smallest_set_cover():
    inst = gen_setcover(1, 2, 1.0, seed=0)
    assert (inst.m, inst.n) == (1, 2)
    assert np.array_equal(inst.A, [[-1.0, -1.0]])
    assert validate_solution(inst, [1, 0], 1e-9)


def test_set_cover_structure():
    for inst in generate_batch("setcover", 20, 3):
        cover = -inst.A
        assert set(np.unique(cover)) <= {0.0, 1.0}
        assert np.all(cover.sum(axis=1) >= 2)
        assert np.all(cover.sum(axis=0) >= 1)
        assert inst.nnz == round(20 * 40 * 0.2)
        assert np.all((inst.c >= 1) & (inst.c <= 100))
        assert validate_solution(inst, np.ones(inst.n), 1e-9)


def test_set_cover_rejects_bad_parameters():
    with pytest.raises(ValueError):
        gen_setcover(0, 5, 0.5, 0)
    with pytest.raises(ValueError):
        gen_setcover(5, 1, 0.5, 0)
    with pytest.raises(ValueError):
        gen_setcover(5, 5, 0.0, 0)
    with pytest.raises(ValueError):
        gen_setcover(10, 10, 0.05, 0)


def test_single_bid_auction():
    inst = gen_auctions(1, 1, seed=2)
    assert (inst.n, inst.m) == (1, 1)
    assert inst.c[0] < 0
    status, sol = brute_force_solve(inst)
    assert status == SolveStatus.OPTIMAL and sol.x[0] == 1.0


def test_auction_structure():
    for inst in generate_batch("cauctions", 10, 4):
        assert set(np.unique(inst.A)) <= {0.0, 1.0}
        assert np.all(inst.A.sum(axis=0) >= 1)  # every bid asks for an item
        assert np.all(inst.b == 1.0)
        assert validate_solution(inst, np.zeros(inst.n), 1e-9)


def test_cfl_single_facility():
    inst = gen_cfl(1, 1, seed=0)
    assert inst.n == 2 and list(inst.is_integer) == [True, False]
    status, sol = brute_force_solve(inst)
    assert status == SolveStatus.OPTIMAL
    assert list(sol.x) == pytest.approx([1.0, 1.0])


def test_cfl_all_open_is_feasible():
    for inst in generate_batch("cfl", 5, 6):
        F = 3
        J = 4
        # open everything and split each customer evenly
        x = np.concatenate([np.ones(F), np.full(F * J, 1.0 / F)])
        assert validate_solution(inst, x, 1e-6)


def test_mis_edge_count_and_formulation():
    for nodes, aff in ((12, 2), (30, 3), (5, 1)):
        inst = gen_mis(nodes, aff, seed=1)
        assert inst.m == aff * (nodes - aff)
        assert np.all(inst.A.sum(axis=1) == 2)
        assert validate_solution(inst, np.zeros(nodes), 1e-9)


def test_mis_on_a_tree_matches_brute_force():
    # affinity 1 gives a tree
    inst = gen_mis(8, 1, seed=5)
    status, sol = brute_force_solve(inst)
    rep = solve_bnb(inst, make_brancher("fsb"))
    assert rep.objective == pytest.approx(sol.objective)
    assert -sol.objective >= 4  # a tree on 8 nodes has an independent set of half its nodes


def test_mis_rejects_bad_affinity():
    with pytest.raises(ValueError):
        gen_mis(3, 3, 0)
    with pytest.raises(ValueError):
        gen_mis(3, 0, 0)


def test_generators_are_deterministic():
    for fam in Family:
        a = generate_batch(fam, 3, 11)
        b = generate_batch(fam, 3, 11)
        assert [serialize_instance(i) for i in a] == [serialize_instance(i) for i in b]
        c = generate_batch(fam, 3, 12)
        assert [serialize_instance(i) for i in a] != [serialize_instance(i) for i in c]


def test_batch_names_and_overrides():
    insts = generate_batch("mis", 3, 0, nodes=20)
    assert [i.name for i in insts] == ["mis_0000", "mis_0001", "mis_0002"]
    assert all(i.n == 20 for i in insts)
    with pytest.raises(ValueError):
        generate_batch("knapsack", 1, 0)


def test_presets_cover_every_family():
    for preset in PRESETS.values():
        assert set(preset) == set(Family)
    inst = generate("setcover", 0, **PRESETS["desk"][Family.SET_COVER])
    assert (inst.m, inst.n) == (20, 40)


def test_bnb_agrees_with_brute_force_on_small_generated():
    insts = [gen_setcover(6, 10, 0.4, s) for s in range(5)]
    insts += [gen_auctions(5, 8, s) for s in range(5)]
    insts += [gen_mis(9, 2, s) for s in range(5)]
    for inst in insts:
        status, sol = brute_force_solve(inst)
        rep = solve_bnb(inst, make_brancher("pb"))
        assert rep.status == status == SolveStatus.OPTIMAL
        assert rep.objective == pytest.approx(sol.objective, abs=1e-6)
