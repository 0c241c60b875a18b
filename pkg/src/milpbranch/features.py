"""Bipartite graph encoding of a branch-and-bound node and input normalization.

Variable features (9): normalized objective coefficient, has lower bound,
has upper bound, at lower bound, at upper bound, LP value clipped to the node
bounds, fractionality, is basic, normalized reduced cost.

Constraint features (5): normalized rhs, normalized dual, is tight, mean row
coefficient, normalized slack.

Edge feature (1): coefficient divided by the row norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simplex import BasisStatus, LpSolution

SCHEMA_VERSION = 1
VAR_FEATS = 9
CONS_FEATS = 5
EDGE_FEATS = 1
STD_FLOOR = 1e-8
TIGHT_TOL = 1e-6


class SchemaMismatch(ValueError):
    pass


@dataclass(eq=False)
class BipartiteState:
    cons_feats: np.ndarray      # (m, 5)
    var_feats: np.ndarray       # (n, 9)
    edge_index: np.ndarray      # (2, nnz): constraint row, variable column
    edge_feats: np.ndarray      # (nnz, 1)
    candidates: np.ndarray      # sorted fractional integer variables
    episode: int = 0
    schema_version: int = SCHEMA_VERSION

    @property
    def n(self) -> int:
        return self.var_feats.shape[0]

    @property
    def m(self) -> int:
        return self.cons_feats.shape[0]

    def __eq__(self, other):
        if not isinstance(other, BipartiteState):
            return NotImplemented
        return (self.episode == other.episode and self.schema_version == other.schema_version
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("cons_feats", "var_feats", "edge_index", "edge_feats", "candidates")))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "episode": self.episode,
            "m": self.m,
            "n": self.n,
            "cons_feats": self.cons_feats.tolist(),
            "var_feats": self.var_feats.tolist(),
            "edge_index": self.edge_index.tolist(),
            "edge_feats": self.edge_feats.tolist(),
            "candidates": self.candidates.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BipartiteState":
        m, n = doc["m"], doc["n"]
        return cls(
            np.array(doc["cons_feats"], dtype=float).reshape(m, CONS_FEATS),
            np.array(doc["var_feats"], dtype=float).reshape(n, VAR_FEATS),
            np.array(doc["edge_index"], dtype=np.int64).reshape(2, -1),
            np.array(doc["edge_feats"], dtype=float).reshape(-1, EDGE_FEATS),
            np.array(doc["candidates"], dtype=np.int64),
            int(doc["episode"]),
            int(doc["schema_version"]),
        )


def _safe_norm(v):
    norm = float(np.linalg.norm(v))
    return norm if norm > 0.0 else 1.0


def extract_state(inst, node, lp: LpSolution, episode: int = 0) -> BipartiteState:
    """Encode the LP state at ``node`` (anything with ``lower``/``upper``)."""
    if not lp.is_optimal:
        raise ValueError("features need an optimal LP solution")
    n, m = inst.n, inst.m
    lower, upper = node.lower, node.upper
    x = np.clip(lp.x, lower, upper)
    c_norm = _safe_norm(inst.c)

    frac = np.minimum(x - np.floor(x), np.ceil(x) - x)
    var = np.empty((n, VAR_FEATS))
    var[:, 0] = inst.c / c_norm
    var[:, 1] = np.isfinite(lower)
    var[:, 2] = np.isfinite(upper)
    var[:, 3] = np.abs(x - lower) <= TIGHT_TOL
    var[:, 4] = np.abs(upper - x) <= TIGHT_TOL
    var[:, 5] = x
    var[:, 6] = frac
    var[:, 7] = lp.basis_status == BasisStatus.BASIC
    var[:, 8] = lp.reduced_costs / c_norm

    rows, cols, vals = inst.rows, inst.cols, inst.vals
    row_norm = np.sqrt(np.bincount(rows, weights=vals * vals, minlength=m))
    row_norm[row_norm == 0.0] = 1.0
    counts = np.bincount(rows, minlength=m)
    row_sum = np.bincount(rows, weights=vals, minlength=m)
    slack = inst.b - (inst.A @ lp.x if m else np.zeros(0))

    cons = np.empty((m, CONS_FEATS))
    cons[:, 0] = inst.b / row_norm
    cons[:, 1] = lp.duals / c_norm
    cons[:, 2] = slack <= TIGHT_TOL
    cons[:, 3] = np.divide(row_sum, counts, out=np.zeros(m), where=counts > 0)
    cons[:, 4] = slack / row_norm

    edges = np.vstack([rows, cols]).astype(np.int64)
    edge_feats = (vals / row_norm[rows]).reshape(-1, 1)

    from .bnb import fractional_candidates
    cands = fractional_candidates(inst, lp.x)
    return BipartiteState(cons, var, edges, edge_feats, cands, int(episode))


@dataclass
class PreNormStats:
    var_mean: np.ndarray
    var_std: np.ndarray
    cons_mean: np.ndarray
    cons_std: np.ndarray
    edge_mean: np.ndarray
    edge_std: np.ndarray
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def identity(cls) -> "PreNormStats":
        return cls(np.zeros(VAR_FEATS), np.ones(VAR_FEATS), np.zeros(CONS_FEATS),
                   np.ones(CONS_FEATS), np.zeros(EDGE_FEATS), np.ones(EDGE_FEATS))

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in vars(self).items()}

    @classmethod
    def from_dict(cls, doc: dict) -> "PreNormStats":
        arrays = {k: np.array(v, dtype=float) for k, v in doc.items() if k != "schema_version"}
        return cls(**arrays, schema_version=int(doc.get("schema_version", SCHEMA_VERSION)))

    def __eq__(self, other):
        if not isinstance(other, PreNormStats):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in vars(self))


def _column_stats(block):
    mean = block.mean(axis=0)
    std = block.std(axis=0)
    const = np.all(block == block[:1], axis=0)
    # constant columns get their exact value as mean so they normalize to 0
    mean[const] = block[0, const]
    return mean, np.maximum(std, STD_FLOOR)


def prenorm_fit(states) -> PreNormStats:
    """Population mean/std per feature column over all nodes and edges."""
    states = list(states)
    if not states:
        raise ValueError("cannot fit normalization on an empty dataset")
    for s in states:
        if s.schema_version != SCHEMA_VERSION:
            raise SchemaMismatch(f"state schema {s.schema_version} != {SCHEMA_VERSION}")
    stats = []
    for attr, width in (("var_feats", VAR_FEATS), ("cons_feats", CONS_FEATS), ("edge_feats", EDGE_FEATS)):
        block = np.concatenate([getattr(s, attr) for s in states], axis=0)
        if block.shape[0] == 0:
            stats += [np.zeros(width), np.ones(width)]
        else:
            stats += list(_column_stats(block))
    return PreNormStats(*stats)


def prenorm_apply(stats: PreNormStats, state: BipartiteState) -> BipartiteState:
    """Return a normalized copy; call once per raw state."""
    if stats.schema_version != state.schema_version:
        raise SchemaMismatch(f"stats schema {stats.schema_version} != state schema {state.schema_version}")
    return BipartiteState(
        (state.cons_feats - stats.cons_mean) / stats.cons_std,
        (state.var_feats - stats.var_mean) / stats.var_std,
        state.edge_index,
        (state.edge_feats - stats.edge_mean) / stats.edge_std,
        state.candidates,
        state.episode,
        state.schema_version,
    )
