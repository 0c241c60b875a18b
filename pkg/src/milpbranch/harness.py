"""Benchmark metrics and the sweep runner: shifted geometric means, wins,
the dual-integral reward and dual/primal gap curves."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bnb import Limits, SolveReport, solve_bnb
from .branchers import make_brancher
from .milp import MilpInstance, SolveStatus, _json_num, instance_from_dict, instance_to_dict

SOLVED = (SolveStatus.OPTIMAL.value, SolveStatus.INFEASIBLE.value)
FAILED = "Error"


def shifted_gmean(values, shift: float = 1.0) -> float:
    """``exp(mean(log(v + shift))) - shift``."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise ValueError("shifted_gmean of an empty sequence")
    if np.any(v < 0) or np.any(np.isnan(v)):
        raise ValueError("shifted_gmean needs non-negative values")
    return float(math.exp(math.fsum(np.log(v + shift)) / v.size) - shift)


def step_value(history, t, default=math.nan):
    """Value of the last ``(clock, value)`` record at or before ``t``."""
    out = default
    for clock, value in history:
        if clock > t:
            break
        out = value
    return out


def dual_integral_reward(history, T: float, optimum: float) -> float:
    """Integral over ``[0, T]`` of the step function through the dual bound
    records, minus ``T * optimum``. Records past ``T`` are ignored."""
    if not history:
        raise ValueError("empty dual history")
    if history[0][0] != 0:
        raise ValueError("dual history must start at clock 0")
    clocks = [float(t) for t, _ in history]
    if any(b <= a for a, b in zip(clocks, clocks[1:])):
        raise ValueError("dual history clocks must be strictly increasing")
    parts = []
    for k, (t, z) in enumerate(history):
        if t >= T:
            break
        end = min(clocks[k + 1], T) if k + 1 < len(history) else T
        parts.append(z * (end - t))
    return math.fsum(parts) - T * optimum


def count_wins(table, policies) -> dict:
    """``table[policy][instance]`` is the cell's key (lower is better) or None
    when unsolved. Exact ties go to the earliest listed policy."""
    policies = list(policies)
    wins = {p: 0 for p in policies}
    instances = sorted({i for p in policies for i in table.get(p, {})})
    for inst in instances:
        best, best_key = None, math.inf
        for p in policies:
            if inst not in table.get(p, {}):
                raise KeyError(f"missing result for policy {p!r} on {inst!r}")
            key = table[p][inst]
            if key is not None and key < best_key:
                best, best_key = p, key
        if best is not None:
            wins[best] += 1
    return wins


def gap_curve(report: SolveReport, sample_points) -> list:
    """``(clock, dual, primal, gap)`` rows with bounds step-interpolated at
    each sample point."""
    rows = []
    for t in sample_points:
        dual = step_value(report.dual_history, t, -math.inf)
        primal = step_value(report.primal_history, t, math.inf)
        gap = primal - dual if math.isfinite(primal) and math.isfinite(dual) else math.inf
        rows.append((t, dual, primal, gap))
    return rows


def std_percent(values) -> float:
    """Population standard deviation as a percentage of |mean|."""
    v = np.asarray(values, dtype=float)
    mu, sigma = float(v.mean()), float(v.std())
    if mu == 0:
        return 0.0 if sigma == 0 else math.inf
    return 100.0 * sigma / abs(mu)


@dataclass
class Cell:
    instance: str
    policy: str
    seed: int
    time: float
    nodes: int
    status: str
    report: SolveReport | None = None
    reward: float = math.nan
    error: str = ""

    @property
    def solved(self) -> bool:
        return self.status in SOLVED


def _run_cell(args):
    inst_doc, policy, seed, limits, clock_mode, model_doc = args
    inst = instance_from_dict(inst_doc)
    model = None
    if model_doc is not None:
        from .nn.model import PolicyModel
        model = PolicyModel.from_dict(model_doc)
    try:
        report = solve_bnb(inst, make_brancher(policy, seed, model), limits, clock_mode=clock_mode)
    except Exception as exc:  # a failed cell must not stop the sweep
        return Cell(inst.name, policy, seed, math.nan, 0, FAILED, error=f"{type(exc).__name__}: {exc}")
    return Cell(inst.name, policy, seed, float(report.final_clock), report.nodes_processed,
                report.status.value, report)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def run_benchmark(instances, policies, limits: Limits | None = None, seeds=(0, 1, 2, 3, 4),
                  clock_mode: str = "node", out_dir=None, jobs: int = 1, model=None) -> dict:
    """Run every (instance, policy, seed) cell and aggregate.

    The reward horizon ``T`` is the time limit in wall mode; in node mode it is
    the node limit, or without one the largest node clock reached on that
    instance. The optimum used by the reward is the best primal value found by
    any run.
    """
    limits = limits or Limits()
    policies, seeds = list(policies), list(seeds)
    names = [inst.name for inst in instances]
    if len(set(names)) != len(names):
        raise ValueError("instance names must be unique")
    model_doc = model.to_dict() if model is not None else None
    tasks = [(instance_to_dict(inst), p, s, limits, clock_mode, model_doc)
             for inst in instances for p in policies for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks))
    else:
        cells = [_run_cell(t) for t in tasks]

    def limit_value(name):
        if clock_mode == "wall":
            return float(limits.time_limit)
        if limits.node_limit is not None:
            return float(max(limits.node_limit - 1, 0))
        return max((c.time for c in cells if c.instance == name and not math.isnan(c.time)), default=0.0)

    by_inst = {}
    for c in cells:
        by_inst.setdefault(c.instance, []).append(c)
    for name, group in by_inst.items():
        primals = [c.report.objective for c in group if c.report is not None]
        optimum = min(primals, default=math.inf)
        T = limit_value(name)
        if clock_mode == "node" and limits.node_limit is None:
            T = max(T, 1.0)  # root-solved instances still get a unit horizon
        for c in group:
            if c.status != FAILED and c.report.dual_history and math.isfinite(optimum):
                c.reward = dual_integral_reward(c.report.dual_history, T, optimum)
            if not c.solved and c.status != FAILED:
                c.time = limit_value(name)

    summary = _aggregate(cells, names, policies, seeds, limit_value)
    if out_dir is not None:
        _write_outputs(out_dir, cells, summary)
    return {"cells": cells, "summary": summary}


def _aggregate(cells, names, policies, seeds, limit_value) -> dict:
    grid = {(c.instance, c.policy, c.seed): c for c in cells}
    times = {p: {} for p in policies}
    out = {}
    for p in policies:
        per_inst_time, per_inst_nodes, solved_time, solved_nodes = [], [], [], []
        failed = 0
        for name in names:
            group = [grid[(name, p, s)] for s in seeds]
            failed += sum(c.status == FAILED for c in group)
            t = [c.time if not math.isnan(c.time) else limit_value(name) for c in group]
            per_inst_time.append(float(np.mean(t)))
            per_inst_nodes.append(float(np.mean([c.nodes for c in group])))
            if all(c.solved for c in group):
                solved_time.append(per_inst_time[-1])
                solved_nodes.append(per_inst_nodes[-1])
                times[p][name] = per_inst_time[-1]
            else:
                times[p][name] = None
        rewards = []
        for s in seeds:
            vals = [grid[(n, p, s)].reward for n in names]
            rewards.append(float(np.mean(vals)) if vals else math.nan)
        out[p] = {
            "time_gmean": shifted_gmean(per_inst_time) if per_inst_time else math.nan,
            "time_gmean_solved": shifted_gmean(solved_time) if solved_time else math.nan,
            "nodes_gmean": shifted_gmean(per_inst_nodes) if per_inst_nodes else math.nan,
            "nodes_gmean_solved": shifted_gmean(solved_nodes) if solved_nodes else math.nan,
            "solved": len(solved_time),
            "failed_cells": failed,
            "reward_mean": float(np.mean(rewards)) if rewards else math.nan,
            "reward_std_pct": std_percent(rewards) if rewards and not np.any(np.isnan(rewards)) else math.nan,
        }
    wins = count_wins(times, policies)
    for p in policies:
        out[p]["wins"] = wins[p]
    return {"policies": policies, "instances": len(names), "seeds": seeds, "table": out}


def _write_outputs(out_dir, cells, summary):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "policy", "seed", "time", "nodes", "status", "reward"])
        for c in cells:
            w.writerow([c.instance, c.policy, c.seed, _fmt(c.time), c.nodes, c.status, _fmt(c.reward)])
    for c in cells:
        if c.report is None:
            continue
        rep = c.report
        points = sorted({0.0, float(rep.final_clock)}
                        | {float(t) for t, _ in rep.dual_history}
                        | {float(t) for t, _ in rep.primal_history})
        path = os.path.join(out_dir, f"gap_{c.instance}_{c.policy}_{c.seed}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clock", "dual", "primal", "gap"])
            for row in gap_curve(rep, points):
                w.writerow([_fmt(float(v)) for v in row])
    failed = [{"instance": c.instance, "policy": c.policy, "seed": c.seed, "error": c.error}
              for c in cells if c.status == FAILED]
    doc = dict(summary, failed=failed)
    doc["table"] = {p: {k: _json_num(v) if isinstance(v, float) else v for k, v in row.items()}
                    for p, row in summary["table"].items()}
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
