"""Best-bound branch and bound with a pluggable variable-selection policy."""
from __future__ import annotations

import csv
import heapq
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .milp import Assignment, MilpInstance, SolveStatus, _from_json_num, _json_num
from .simplex import LpRelaxation, LpSolution, solve_lp

INT_TOL = 1e-6
PRUNE_TOL = 1e-9


class NotFractional(ValueError):
    pass


class LpIterationLimit(RuntimeError):
    pass


@dataclass
class BnbNode:
    node_id: int
    depth: int
    lower: np.ndarray
    upper: np.ndarray
    parent_dual_bound: float
    # how this node was created from its parent (None for the root)
    branch_var: int | None = None
    branch_up: bool = False
    branch_frac: float = 0.0

    def sort_key(self):
        return (self.parent_dual_bound, self.node_id)


@dataclass
class BranchDecision:
    chosen_var: int
    candidates: np.ndarray


@dataclass
class Limits:
    time_limit: float = 3600.0
    node_limit: int | None = None


def fractional_candidates(inst: MilpInstance, x) -> np.ndarray:
    """Integer variables whose LP value is more than INT_TOL from an integer."""
    x = np.asarray(x)
    frac = np.abs(x - np.round(x))
    return np.flatnonzero(inst.is_integer & (frac > INT_TOL))


def make_children(node: BnbNode, j: int, x_lp_j: float, ids=None, dual_bound=None):
    """Split the domain of ``x_j`` into ``x_j <= floor`` and ``x_j >= ceil``."""
    if abs(x_lp_j - round(x_lp_j)) <= INT_TOL:
        raise NotFractional(f"x{j} = {x_lp_j} is integral")
    down_id, up_id = ids if ids is not None else (2 * node.node_id + 1, 2 * node.node_id + 2)
    bound = node.parent_dual_bound if dual_bound is None else dual_bound
    fl, ce = math.floor(x_lp_j), math.ceil(x_lp_j)

    down_upper = node.upper.copy()
    down_upper[j] = fl
    up_lower = node.lower.copy()
    up_lower[j] = ce
    down = BnbNode(down_id, node.depth + 1, node.lower.copy(), down_upper, bound,
                   j, False, x_lp_j - fl)
    up = BnbNode(up_id, node.depth + 1, up_lower, node.upper.copy(), bound,
                 j, True, ce - x_lp_j)
    return down, up


def select_node(open_set):
    """Best-bound node selection; ties go to the smallest node id."""
    return min(open_set, key=BnbNode.sort_key)


class BranchContext:
    """Everything a brancher may look at when making one decision."""

    def __init__(self, instance, node, lp, candidates, episode):
        self.instance = instance
        self.node = node
        self.lp = lp
        self.candidates = candidates
        self.episode = episode
        self._state = None

    @property
    def state(self):
        if self._state is None:
            from .features import extract_state
            self._state = extract_state(self.instance, self.node, self.lp, self.episode)
        return self._state


class Brancher:
    """Base class for variable-selection policies.

    ``reset`` is called once per solve, ``select`` once per branching episode
    and ``observe`` whenever a child LP is solved to optimality.
    """

    name = "base"

    def reset(self, instance: MilpInstance) -> None:
        pass

    def select(self, ctx: BranchContext) -> int:
        raise NotImplementedError

    def observe(self, var: int, up: bool, gain: float, fractionality: float) -> None:
        pass


@dataclass
class SolveReport:
    status: SolveStatus
    incumbent: Assignment | None
    nodes_processed: int
    episodes: int
    dual_history: list
    primal_history: list
    clock_mode: str
    decisions: list = field(default_factory=list)
    wall_time: float = field(default=0.0, compare=False)

    @property
    def objective(self) -> float:
        return self.incumbent.objective if self.incumbent is not None else math.inf

    @property
    def final_dual(self) -> float:
        return self.dual_history[-1][1] if self.dual_history else -math.inf

    @property
    def final_clock(self) -> float:
        if self.clock_mode == "node":
            return float(max(self.nodes_processed - 1, 0))
        return self.wall_time

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "objective": _json_num(self.objective),
            "x": None if self.incumbent is None else [float(v) for v in self.incumbent.x],
            "nodes_processed": self.nodes_processed,
            "episodes": self.episodes,
            "clock_mode": self.clock_mode,
            "dual_history": [[t, _json_num(z)] for t, z in self.dual_history],
            "primal_history": [[t, _json_num(z)] for t, z in self.primal_history],
            "decisions": [int(v) for v in self.decisions],
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SolveReport":
        inc = None
        if doc.get("x") is not None:
            inc = Assignment(np.array(doc["x"], dtype=float), _from_json_num(doc["objective"]))
        return cls(
            SolveStatus(doc["status"]), inc, doc["nodes_processed"], doc["episodes"],
            [(t, _from_json_num(z)) for t, z in doc["dual_history"]],
            [(t, _from_json_num(z)) for t, z in doc["primal_history"]],
            doc["clock_mode"], list(doc.get("decisions", [])), doc.get("wall_time", 0.0),
        )

    def write_bounds_csv(self, path) -> None:
        """Step-merged ``(clock, dual, primal)`` rows at every recorded event."""
        from .harness import step_value
        clocks = sorted({t for t, _ in self.dual_history} | {t for t, _ in self.primal_history})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["clock", "dual", "primal"])
            for t in clocks:
                w.writerow([t, step_value(self.dual_history, t, -math.inf),
                            step_value(self.primal_history, t, math.inf)])


def solve_bnb(inst: MilpInstance, brancher: Brancher, limits: Limits | None = None,
              clock_mode: str = "node", prune: bool = True, on_branch=None) -> SolveReport:
    """Solve ``inst`` to optimality (or until a limit) by branch and bound.

    ``on_branch(ctx, var)`` is invoked after every branching decision.
    With ``prune=False`` nodes are only discarded when infeasible, which is
    slower but must return the same objective.
    """
    if clock_mode not in ("node", "wall"):
        raise ValueError("clock_mode must be 'node' or 'wall'")
    limits = limits or Limits()
    start = time.perf_counter()
    brancher.reset(inst)

    root = BnbNode(0, 0, np.array(inst.lower), np.array(inst.upper), -math.inf)
    heap = [(root.sort_key(), root)]
    next_id = 1
    nodes = 0
    episodes = 0
    primal = math.inf
    incumbent = None
    dual_hist, primal_hist, decisions = [], [], []
    last_dual = -math.inf
    status = None

    def clock():
        if clock_mode == "node":
            return max(nodes - 1, 0)
        return 0.0 if nodes <= 1 else time.perf_counter() - start

    def record():
        nonlocal last_dual
        dual = max(min(heap[0][0][0], primal) if heap else primal, last_dual)
        if not dual_hist or dual > last_dual:
            dual_hist.append((clock(), dual))
            last_dual = dual

    while heap:
        if limits.node_limit is not None and nodes >= limits.node_limit:
            status = SolveStatus.LIMIT_REACHED
            break
        if time.perf_counter() - start > limits.time_limit:
            status = SolveStatus.LIMIT_REACHED
            break
        _, node = heapq.heappop(heap)
        if prune and node.parent_dual_bound >= primal - PRUNE_TOL:
            continue

        lp = solve_lp(LpRelaxation(inst, node.lower, node.upper))
        nodes += 1
        if lp.status == SolveStatus.LIMIT_REACHED:
            raise LpIterationLimit(f"simplex pivot limit at node {node.node_id}")
        if lp.status == SolveStatus.UNBOUNDED:
            status = SolveStatus.UNBOUNDED
            break
        if lp.status == SolveStatus.INFEASIBLE:
            record()
            continue

        z = lp.objective
        if node.branch_var is not None:
            brancher.observe(node.branch_var, node.branch_up,
                             max(z - node.parent_dual_bound, 0.0), node.branch_frac)
        if prune and z >= primal - PRUNE_TOL:
            record()
            continue

        cands = fractional_candidates(inst, lp.x)
        if cands.size == 0:
            x = lp.x.copy()
            x[inst.is_integer] = np.round(x[inst.is_integer])
            obj = inst.objective(x)
            if obj < primal:
                primal = obj
                incumbent = Assignment(x, obj)
                primal_hist.append((clock(), obj))
            record()
            continue

        ctx = BranchContext(inst, node, lp, cands, episodes)
        var = int(brancher.select(ctx))
        if var not in set(cands.tolist()):
            raise ValueError(f"brancher {brancher.name!r} chose x{var}, not a fractional candidate")
        if on_branch is not None:
            on_branch(ctx, var)
        decisions.append(var)
        episodes += 1
        down, up = make_children(node, var, lp.x[var], ids=(next_id, next_id + 1), dual_bound=z)
        next_id += 2
        heapq.heappush(heap, (down.sort_key(), down))
        heapq.heappush(heap, (up.sort_key(), up))
        record()

    if status is None:
        status = SolveStatus.OPTIMAL if incumbent is not None else SolveStatus.INFEASIBLE
    if status == SolveStatus.UNBOUNDED:
        incumbent = None
    return SolveReport(status, incumbent, nodes, episodes, dual_hist, primal_hist, clock_mode,
                       decisions, time.perf_counter() - start)
