"""Variable-selection policies: strong branching, pseudocosts, random, and the
learned policy (alone or warmed up by pseudocosts)."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .bnb import BranchContext, Brancher
from .milp import SolveStatus
from .simplex import LpRelaxation, solve_lp

EPS = 1e-6
INFEASIBLE_GAIN = 1e10


@dataclass
class BranchScore:
    var: int
    score: float


def _argmax_lowest(scores):
    """Index of the maximal score; earlier entries win exact ties."""
    best = None
    for s in scores:
        if best is None or s.score > best.score:
            best = s
    return best.var


def fsb_scores(inst, node, lp, candidates) -> list:
    """Score each candidate by solving both child LPs.

    score = max(down gain, eps) * max(up gain, eps); an infeasible child counts
    as a gain of 1e10.
    """
    if len(candidates) == 0:
        raise ValueError("no candidates to score")
    z = lp.objective
    out = []
    for j in sorted(int(v) for v in candidates):
        xj = lp.x[j]
        gains = []
        for up in (False, True):
            lower, upper = node.lower.copy(), node.upper.copy()
            if up:
                lower[j] = math.ceil(xj)
            else:
                upper[j] = math.floor(xj)
            child = solve_lp(LpRelaxation(inst, lower, upper))
            if child.status == SolveStatus.INFEASIBLE:
                gains.append(INFEASIBLE_GAIN)
            elif child.status == SolveStatus.OPTIMAL:
                gains.append(max(child.objective - z, 0.0))
            elif child.status == SolveStatus.UNBOUNDED:
                gains.append(0.0)
            else:
                from .bnb import LpIterationLimit
                raise LpIterationLimit(f"strong branching LP on x{j} hit the pivot limit")
        out.append(BranchScore(j, max(gains[0], EPS) * max(gains[1], EPS)))
    return out


class FullStrongBrancher(Brancher):
    name = "fsb"

    def select(self, ctx: BranchContext) -> int:
        if len(ctx.candidates) == 1:
            return int(ctx.candidates[0])
        return _argmax_lowest(fsb_scores(ctx.instance, ctx.node, ctx.lp, ctx.candidates))


class PseudocostStore:
    """Per-variable sums and counts of objective gain per unit of fractionality."""

    def __init__(self, n: int):
        self.up_sum = np.zeros(n)
        self.up_count = np.zeros(n, dtype=np.int64)
        self.down_sum = np.zeros(n)
        self.down_count = np.zeros(n, dtype=np.int64)

    def update(self, j: int, up: bool, gain: float, fractionality: float) -> "PseudocostStore":
        if fractionality <= 0:
            raise ValueError("fractionality must be positive")
        if up:
            self.up_sum[j] += gain / fractionality
            self.up_count[j] += 1
        else:
            self.down_sum[j] += gain / fractionality
            self.down_count[j] += 1
        return self

    def _means(self, sums, counts):
        seen = counts > 0
        means = np.divide(sums, counts, out=np.zeros_like(sums), where=seen)
        fallback = means[seen].mean() if seen.any() else 1.0
        return np.where(seen, means, fallback)

    def up_means(self) -> np.ndarray:
        return self._means(self.up_sum, self.up_count)

    def down_means(self) -> np.ndarray:
        return self._means(self.down_sum, self.down_count)


def pseudocost_update(store, j, up, objective_gain, fractionality):
    return store.update(j, up, objective_gain, fractionality)


def pseudocost_scores(store: PseudocostStore, x, candidates) -> list:
    up, down = store.up_means(), store.down_means()
    out = []
    for j in sorted(int(v) for v in candidates):
        f = x[j] - math.floor(x[j])
        out.append(BranchScore(j, max(down[j] * f, EPS) * max(up[j] * (1.0 - f), EPS)))
    return out


def pseudocost_select(store, lp, candidates) -> int:
    return _argmax_lowest(pseudocost_scores(store, lp.x, candidates))


class PseudocostBrancher(Brancher):
    name = "pb"

    def __init__(self):
        self.store = None

    def reset(self, instance):
        self.store = PseudocostStore(instance.n)

    def select(self, ctx):
        return pseudocost_select(self.store, ctx.lp, ctx.candidates)

    def observe(self, var, up, gain, fractionality):
        if fractionality > 0:
            self.store.update(var, up, gain, fractionality)


class RandomBrancher(Brancher):
    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def reset(self, instance):
        self.rng = np.random.default_rng(self.seed)

    def select(self, ctx):
        return int(self.rng.choice(np.sort(ctx.candidates)))


class TgatBrancher(Brancher):
    """Learned policy over the embeddings of the most recent states.

    Before ``seq_len`` states exist the GRU simply runs over the shorter
    history.
    """

    name = "tgat"

    def __init__(self, model):
        self.model = model
        self.history = deque(maxlen=model.config.seq_len)

    def reset(self, instance):
        self.history.clear()

    def _push(self, ctx):
        self.history.append(self.model.embed(self.model.normalize(ctx.state)))

    def _decide(self, ctx):
        from .nn.model import pick
        logits = self.model.logits_from_embeddings(list(self.history))
        return pick(logits, ctx.candidates)

    def select(self, ctx):
        self._push(ctx)
        return self._decide(ctx)


class HybridBrancher(TgatBrancher):
    """Pseudocost branching for the first L-1 episodes, the learned policy after."""

    name = "hybrid"

    def __init__(self, model):
        super().__init__(model)
        self.pb = PseudocostBrancher()

    def reset(self, instance):
        super().reset(instance)
        self.pb.reset(instance)

    def observe(self, var, up, gain, fractionality):
        self.pb.observe(var, up, gain, fractionality)

    def select(self, ctx):
        return hybrid_select(ctx.episode, self, ctx)


def hybrid_select(episode: int, hybrid: HybridBrancher, ctx) -> int:
    """Warm-up rule: with fewer than L-1 earlier states, defer to pseudocosts
    but still record this state's embedding."""
    observed = len(hybrid.history)
    hybrid._push(ctx)
    if observed < hybrid.model.config.seq_len - 1:
        return hybrid.pb.select(ctx)
    return hybrid._decide(ctx)


BRANCHERS = ("fsb", "pb", "random", "tgat", "hybrid")


def make_brancher(name: str, seed: int = 0, model=None) -> Brancher:
    if name == "fsb":
        return FullStrongBrancher()
    if name == "pb":
        return PseudocostBrancher()
    if name == "random":
        return RandomBrancher(seed)
    if name in ("tgat", "hybrid"):
        if model is None:
            raise ValueError(f"brancher {name!r} needs a trained model")
        return TgatBrancher(model) if name == "tgat" else HybridBrancher(model)
    raise ValueError(f"unknown brancher {name!r}; choose from {', '.join(BRANCHERS)}")
