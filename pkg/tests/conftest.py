import itertools
import math

import numpy as np
import pytest

from ndpp import NdppParams


def random_params(rng, m, k, tied=True, scale=1.0, alpha=0.0, beta=0.0):
    v = scale * rng.uniform(0, 1, (m, k))
    d = rng.standard_normal((k, k))
    b = None if tied else scale * rng.uniform(0, 1, (m, k))
    return NdppParams(v=v, d=d, b=b, tied=tied, alpha=alpha, beta=beta)


def leibniz_det(a):
    """Determinant as a sum over permutations.  Exponential, only for n <= 6."""
    n = len(a)
    total = 0.0
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for i in range(n) for j in range(i + 1, n) if perm[i] > perm[j])
        prod = 1.0
        for i in range(n):
            prod *= a[i][perm[i]]
        total += -prod if inv % 2 else prod
    return total


def dense_condition_diag(l, y):
    """Diagonal of the Schur complement L_{~Y} - L_{~Y,Y} L_Y^-1 L_{Y,~Y}."""
    m = l.shape[0]
    y = list(y)
    rest = [i for i in range(m) if i not in y]
    out = np.full(m, -np.inf)
    if not y:
        out[:] = np.diag(l)
        return out
    s = l[np.ix_(rest, rest)] - l[np.ix_(rest, y)] @ np.linalg.solve(l[np.ix_(y, y)], l[np.ix_(y, rest)])
    out[rest] = np.diag(s)
    return out


def brute_force_map(l, k):
    best, best_val = None, -math.inf
    for combo in itertools.combinations(range(l.shape[0]), k):
        det = np.linalg.det(l[np.ix_(combo, combo)])
        if det > 0 and math.log(det) > best_val:
            best, best_val = combo, math.log(det)
    return best, best_val


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
