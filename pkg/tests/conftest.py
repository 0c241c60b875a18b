import numpy as np
import pytest

from milpbranch.features import BipartiteState
from milpbranch.milp import MilpInstance, parse_instance


def rand_state(rng, n=5, m=4, candidates=(0, 2, 3), density=0.6, episode=0):
    """Synthetic bipartite state with Gaussian features."""
    mask = rng.random((m, n)) < density
    mask[rng.integers(0, m), :] |= ~mask.any(axis=0)  # every variable gets an edge
    r, c = np.nonzero(mask)
    return BipartiteState(rng.normal(size=(m, 5)), rng.normal(size=(n, 9)), np.vstack([r, c]),
                          rng.normal(size=(r.size, 1)), np.array(sorted(candidates)), episode)


def random_milp(rng, name="rand", n_int=None, n_cont=None, m=None):
    """Small random bounded MILP; integer variables live in [0, 2]."""
    n_int = int(rng.integers(1, 5)) if n_int is None else n_int
    n_cont = int(rng.integers(0, 3)) if n_cont is None else n_cont
    n = n_int + n_cont
    m = int(rng.integers(1, 5)) if m is None else m
    A = rng.integers(-4, 6, size=(m, n)).astype(float)
    A[rng.random((m, n)) < 0.3] = 0.0
    x_feas = np.concatenate([rng.integers(0, 3, size=n_int), rng.random(n_cont) * 3])
    b = np.floor(A @ x_feas) + rng.integers(0, 3, size=m)
    r, c = np.nonzero(A)
    upper = np.concatenate([np.full(n_int, 2.0), np.full(n_cont, 3.0)])
    is_int = np.arange(n) < n_int
    return MilpInstance(name, rng.integers(-9, 10, size=n).astype(float), r, c, A[r, c], b,
                        np.zeros(n), upper, is_int)


@pytest.fixture
def knapsack3():
    return parse_instance("name knap3\nvars 3\nmax 5 x0 + 4 x1 + 3 x2\ncap: 2 x0 + 3 x1 + x2 <= 4\nbin x0 x1 x2\n")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
