"""Seeded generators for set covering, combinatorial auctions, capacitated
facility location and maximum independent set instances."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .milp import MilpInstance


class Family(str, enum.Enum):
    SET_COVER = "setcover"
    COMB_AUCTION = "cauctions"
    FACILITY_LOCATION = "cfl"
    INDEP_SET = "mis"


def gen_setcover(rows: int, cols: int, density: float, seed: int, name: str | None = None) -> MilpInstance:
    """Random 0/1 covering matrix where every row has at least two columns
    and every column covers at least one row; costs are integers in [1, 100]."""
    if rows < 1 or cols < 2:
        raise ValueError("set cover needs rows >= 1 and cols >= 2")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    nnz = int(round(rows * cols * density))
    if nnz < max(2 * rows, cols):
        raise ValueError(f"density {density} too low: need at least {max(2 * rows, cols)} nonzeros, "
                         f"got {nnz}")
    rng = np.random.default_rng(seed)
    member = np.zeros((rows, cols), dtype=bool)
    # each column covers some row
    member[rng.integers(0, rows, size=cols), np.arange(cols)] = True
    # each row is covered at least twice
    for i in range(rows):
        missing = 2 - int(member[i].sum())
        if missing > 0:
            free = np.flatnonzero(~member[i])
            member[i, rng.choice(free, size=missing, replace=False)] = True
    extra = nnz - int(member.sum())
    if extra > 0:
        free = np.flatnonzero(~member.ravel())
        member.ravel()[rng.choice(free, size=min(extra, free.size), replace=False)] = True

    r, c = np.nonzero(member)
    costs = rng.integers(1, 101, size=cols).astype(float)
    return MilpInstance(
        name or f"setcover_{rows}x{cols}_{seed}", costs, r, c, -np.ones(r.size), -np.ones(rows),
        np.zeros(cols), np.ones(cols), np.ones(cols, dtype=bool),
        tuple(f"cover_{i}" for i in range(rows)),
    )


def gen_auctions(items: int, bids: int, seed: int, add_prob: float = 0.25,
                 name: str | None = None) -> MilpInstance:
    """Each bid asks for a random bundle of ``1 + Binomial(items - 1, add_prob)``
    items at the bundle's value plus noise. Maximizes revenue (stored negated)."""
    if items < 1 or bids < 1:
        raise ValueError("need items >= 1 and bids >= 1")
    rng = np.random.default_rng(seed)
    values = rng.uniform(1.0, 100.0, size=items)
    r, c, prices = [], [], []
    for k in range(bids):
        size = 1 + rng.binomial(items - 1, add_prob)
        bundle = np.sort(rng.choice(items, size=size, replace=False))
        price = values[bundle].sum() * rng.uniform(0.8, 1.2) + rng.uniform(0.0, 5.0)
        prices.append(round(float(price), 2))
        r.extend(bundle.tolist())
        c.extend([k] * size)
    return MilpInstance(
        name or f"cauctions_{items}x{bids}_{seed}", -np.array(prices), r, c, np.ones(len(r)),
        np.ones(items), np.zeros(bids), np.ones(bids), np.ones(bids, dtype=bool),
        tuple(f"item_{i}" for i in range(items)),
    )


def gen_cfl(facilities: int, customers: int, seed: int, ratio: float = 5.0,
            name: str | None = None) -> MilpInstance:
    """Capacitated facility location with random customer and facility sites.

    Variables are ``y_i`` (open facility i, binary) followed by ``z_ij``
    (fraction of customer j served by i, continuous in [0, 1]) at index
    ``facilities + i * customers + j``. Capacities are rescaled so that their
    total is ``ratio`` times the total demand (at least the total demand).
    """
    if facilities < 1 or customers < 1:
        raise ValueError("need at least one facility and one customer")
    rng = np.random.default_rng(seed)
    cust_xy = rng.random((customers, 2))
    fac_xy = rng.random((facilities, 2))
    demand = rng.integers(5, 36, size=customers).astype(float)
    capacity = rng.integers(10, 161, size=facilities).astype(float)
    fixed = np.round(rng.integers(100, 111, size=facilities) * np.sqrt(capacity)
                     + rng.integers(0, 91, size=facilities), 2)
    capacity = np.round(capacity * max(ratio, 1.0) * demand.sum() / capacity.sum(), 4)
    while capacity.sum() < demand.sum():
        capacity *= 1.0 + 1e-6
    dist = np.linalg.norm(fac_xy[:, None, :] - cust_xy[None, :, :], axis=2)
    transport = np.round(10.0 * dist * demand[None, :], 4)

    F, J = facilities, customers
    n = F + F * J
    zidx = lambda i, j: F + i * J + j  # noqa: E731
    r, c, v, b, names = [], [], [], [], []
    row = 0
    for j in range(J):
        for sign, tag in ((1.0, "le"), (-1.0, "ge")):
            for i in range(F):
                r.append(row)
                c.append(zidx(i, j))
                v.append(sign)
            b.append(sign)
            names.append(f"demand_{j}_{tag}")
            row += 1
    for i in range(F):
        for j in range(J):
            r.append(row)
            c.append(zidx(i, j))
            v.append(demand[j])
        r.append(row)
        c.append(i)
        v.append(-capacity[i])
        b.append(0.0)
        names.append(f"capacity_{i}")
        row += 1

    cost = np.concatenate([fixed, transport.ravel()])
    is_int = np.zeros(n, dtype=bool)
    is_int[:F] = True
    return MilpInstance(name or f"cfl_{F}x{J}_{seed}", cost, r, c, v, b, np.zeros(n), np.ones(n),
                        is_int, tuple(names))


def gen_mis(nodes: int, affinity: int, seed: int, name: str | None = None) -> MilpInstance:
    """Maximum independent set on a preferential-attachment graph (each new
    node attaches to ``affinity`` existing ones), edge formulation."""
    if affinity < 1 or nodes <= affinity:
        raise ValueError("need 1 <= affinity < nodes")
    graph = nx.barabasi_albert_graph(nodes, affinity, seed=seed)
    edges = sorted((min(u, v), max(u, v)) for u, v in graph.edges())
    r, c = [], []
    for k, (u, v) in enumerate(edges):
        r += [k, k]
        c += [u, v]
    return MilpInstance(
        name or f"mis_{nodes}_{affinity}_{seed}", -np.ones(nodes), r, c, np.ones(len(r)),
        np.ones(len(edges)), np.zeros(nodes), np.ones(nodes), np.ones(nodes, dtype=bool),
        tuple(f"edge_{u}_{v}" for u, v in edges),
    )


@dataclass(frozen=True)
class GenConfig:
    family: Family
    params: dict = field(default_factory=dict)
    seed: int = 0


# full training sizes and small stand-ins for a single CPU
PRESETS = {
    "easy": {
        Family.SET_COVER: {"rows": 500, "cols": 1000, "density": 0.05},
        Family.COMB_AUCTION: {"items": 100, "bids": 500},
        Family.FACILITY_LOCATION: {"facilities": 100, "customers": 100},
        Family.INDEP_SET: {"nodes": 500, "affinity": 4},
    },
    "desk": {
        Family.SET_COVER: {"rows": 20, "cols": 40, "density": 0.2},
        Family.COMB_AUCTION: {"items": 10, "bids": 20},
        Family.FACILITY_LOCATION: {"facilities": 3, "customers": 4},
        Family.INDEP_SET: {"nodes": 12, "affinity": 2},
    },
}


def generate(family, seed: int, name: str | None = None, **params) -> MilpInstance:
    family = Family(family)
    if family == Family.SET_COVER:
        return gen_setcover(params["rows"], params["cols"], params["density"], seed, name=name)
    if family == Family.COMB_AUCTION:
        return gen_auctions(params["items"], params["bids"], seed, name=name)
    if family == Family.FACILITY_LOCATION:
        return gen_cfl(params["facilities"], params["customers"], seed, name=name)
    return gen_mis(params["nodes"], params["affinity"], seed, name=name)


def generate_batch(family, count: int, seed: int, preset: str = "desk", **overrides):
    """``count`` instances with seeds derived from ``seed``."""
    family = Family(family)
    params = {**PRESETS[preset][family], **{k: v for k, v in overrides.items() if v is not None}}
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [generate(family, int(s), name=f"{family.value}_{k:04d}", **params)
            for k, s in enumerate(seeds)]

