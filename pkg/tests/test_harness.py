import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from milpbranch.bnb import Limits, solve_bnb
from milpbranch.branchers import make_brancher
from milpbranch.generators import generate_batch
from milpbranch.harness import (count_wins, dual_integral_reward, gap_curve, run_benchmark, shifted_gmean,
                                std_percent, step_value)


def test_shifted_gmean_examples():
    assert shifted_gmean([1, 3]) == pytest.approx(math.sqrt(8) - 1)
    assert shifted_gmean([0, 0, 0]) == 0.0
    assert shifted_gmean([5]) == pytest.approx(5.0)
    assert shifted_gmean([10, 10], shift=10) == pytest.approx(10.0)
    with pytest.raises(ValueError):
        shifted_gmean([])
    with pytest.raises(ValueError):
        shifted_gmean([-1, 2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=30))
def test_shifted_gmean_between_min_and_max(vals):
    g = shifted_gmean(vals)
    assert min(vals) - 1e-6 * (1 + max(vals)) <= g <= max(vals) + 1e-6 * (1 + max(vals))


def test_step_value_is_left_continuous_from_records():
    hist = [(0, 1.0), (2, 3.0), (5, 4.0)]
    assert step_value(hist, 0) == 1.0
    assert step_value(hist, 1.99) == 1.0
    assert step_value(hist, 2) == 3.0
    assert step_value(hist, 100) == 4.0
    assert math.isnan(step_value(hist, -1))


def test_reward_examples():
    hist = [(0, 1.0), (2, 3.0)]
    assert dual_integral_reward(hist, 4, 3.0) == pytest.approx(1 * 2 + 3 * 2 - 12)
    # records past the horizon are ignored
    assert dual_integral_reward(hist + [(9, 100.0)], 4, 3.0) == pytest.approx(-4.0)
    # closing the gap at once gives zero
    assert dual_integral_reward([(0, 7.0)], 10, 7.0) == 0.0
    with pytest.raises(ValueError):
        dual_integral_reward([(1, 0.0)], 4, 0.0)
    with pytest.raises(ValueError):
        dual_integral_reward([(0, 0.0), (0, 1.0)], 4, 0.0)
    with pytest.raises(ValueError):
        dual_integral_reward([], 4, 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 20), st.floats(-50, 50)), min_size=0, max_size=8),
       st.floats(-50, 50), st.integers(1, 100))
def test_reward_matches_riemann_sum(steps, z0, T):
    clock, hist = 0, [(0, z0)]
    for dt, z in steps:
        clock += dt
        hist.append((clock, z))
    opt = max(z for _, z in hist)
    # unit grid: the step function is constant on [k, k+1) since clocks are integers
    riemann = sum(step_value(hist, k) - opt for k in range(T))
    assert dual_integral_reward(hist, T, opt) == pytest.approx(riemann, abs=1e-6)
    assert dual_integral_reward(hist, T, opt) <= 1e-9


def test_count_wins_examples():
    table = {"a": {"i1": 3.0, "i2": 5.0, "i3": None},
             "b": {"i1": 2.0, "i2": 5.0, "i3": None},
             "c": {"i1": 9.0, "i2": 6.0, "i3": 1.0}}
    assert count_wins(table, ["a", "b", "c"]) == {"a": 1, "b": 1, "c": 1}
    # tie on i2 goes to whichever is listed first
    assert count_wins(table, ["b", "a", "c"]) == {"b": 2, "a": 0, "c": 1}
    assert count_wins({"a": {"i": None}, "b": {"i": None}}, ["a", "b"]) == {"a": 0, "b": 0}
    with pytest.raises(KeyError):
        count_wins({"a": {"i": 1.0}, "b": {}}, ["a", "b"])


def test_std_percent():
    assert std_percent([2.0, 4.0]) == pytest.approx(100 / 3)
    assert std_percent([-2.0, -4.0]) == pytest.approx(100 / 3)
    assert std_percent([0.0, 0.0]) == 0.0
    assert std_percent([-1.0, 1.0]) == math.inf


def test_gap_curve_properties(knapsack3):
    rep = solve_bnb(knapsack3, make_brancher("random", seed=2))
    pts = np.linspace(0, rep.final_clock, 9)
    rows = gap_curve(rep, pts)
    gaps = [g for *_, g in rows]
    assert all(g >= -1e-9 for g in gaps)
    assert gaps == sorted(gaps, reverse=True)
    assert gaps[-1] == pytest.approx(0.0, abs=1e-9)
    assert rows[0][1] == rep.dual_history[0][1]


@pytest.fixture(scope="module")
def small_set():
    return generate_batch("setcover", 4, 77)


def test_benchmark_node_mode_is_deterministic(tmp_path, small_set):
    a = run_benchmark(small_set, ["fsb", "pb", "random"], seeds=(0, 1), out_dir=tmp_path / "a")
    b = run_benchmark(small_set, ["fsb", "pb", "random"], seeds=(0, 1), out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "results.csv").read_text() == (tmp_path / "b" / "results.csv").read_text()
    assert a["summary"] == b["summary"]
    lines = (tmp_path / "a" / "results.csv").read_text().splitlines()
    assert lines[0] == "instance,policy,seed,time,nodes,status,reward"
    assert len(lines) == 1 + 4 * 3 * 2
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["table"]["fsb"]["solved"] == 4
    assert sum(summary["table"][p]["wins"] for p in ("fsb", "pb", "random")) <= 4
    assert list((tmp_path / "a").glob("gap_*_fsb_0.csv"))


def test_benchmark_reward_never_positive(small_set):
    res = run_benchmark(small_set, ["fsb", "random"], seeds=(0,))
    for c in res["cells"]:
        assert c.reward <= 1e-9


def test_benchmark_node_limit_counts_unsolved(small_set):
    res = run_benchmark(small_set, ["random"], limits=Limits(node_limit=2), seeds=(0,))
    row = res["summary"]["table"]["random"]
    unsolved = [c for c in res["cells"] if not c.solved]
    assert row["solved"] == 4 - len(unsolved)
    assert all(c.time == 1.0 for c in unsolved)


def test_failed_cell_does_not_stop_sweep(tmp_path, small_set):
    # a learned policy without a model fails in every cell
    res = run_benchmark(small_set[:2], ["fsb", "tgat"], seeds=(0,), out_dir=tmp_path)
    row = res["summary"]["table"]["tgat"]
    assert row["failed_cells"] == 2 and row["solved"] == 0
    assert res["summary"]["table"]["fsb"]["solved"] == 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["failed"]) == 2


def test_duplicate_names_rejected(small_set):
    with pytest.raises(ValueError):
        run_benchmark([small_set[0], small_set[0]], ["fsb"], seeds=(0,))


def test_parallel_matches_serial(small_set):
    a = run_benchmark(small_set[:2], ["pb", "random"], seeds=(0, 1))
    b = run_benchmark(small_set[:2], ["pb", "random"], seeds=(0, 1), jobs=2)
    assert a["summary"] == b["summary"]
