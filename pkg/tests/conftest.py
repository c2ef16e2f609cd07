import numpy as np
import pytest

from exel.graph import Partition
from exel.rng import Xoshiro256
from exel.solver import RegressionProblem


def random_partition(n, rng):
    """Random m-partition of range(n): shuffle, then cut at random points."""
    order = rng.permutation(n)
    m = 1 + rng.below(n)
    cuts = sorted(rng.sample(n - 1, m - 1)) if m > 1 else []
    bounds = [0] + [c + 1 for c in cuts] + [n]
    return Partition(groups=tuple(tuple(order[a:b]) for a, b in zip(bounds, bounds[1:])), n=n)


def random_problem(seed, d_range=(8, 64), n_range=(2, 16)):
    rng = Xoshiro256(seed)
    d = d_range[0] + rng.below(d_range[1] - d_range[0] + 1)
    n = n_range[0] + rng.below(n_range[1] - n_range[0] + 1)
    phi = np.array([[rng.normal() for _ in range(n)] for _ in range(d)])
    z = np.array([rng.normal() for _ in range(d)])
    return RegressionProblem(phi, z, random_partition(n, rng))


@pytest.fixture
def rng():
    return Xoshiro256(1234)


_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store a one-line verdict per acceptance criterion and echo it."""
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
