import numpy as np
import pytest

from app.models.gridworld import GridConfig
from app.models.scenario import Cell, ContingencyTable
from app.services.candidate_service import load_success_matrix
from app.services.scenario_service import scenario_service


def _random_table(rng):
    n, a = int(rng.integers(1, 6)), int(rng.integers(1, 5))
    trials = rng.integers(1, 200, size=(n, a))
    cells = [
        Cell(instance=i, arm=j, successes=int(rng.integers(0, trials[i, j] + 1)), trials=int(trials[i, j]))
        for i in range(n)
        for j in range(a)
    ]
    return ContingencyTable(
        instance_names=[f"n{i}" for i in range(n)],
        arm_names=[f"a{j}" for j in range(a)],
        cells=cells,
    )


@pytest.fixture
def kidney():
    return scenario_service.builtin_scenario("kidney")


@pytest.fixture
def magazine():
    return scenario_service.builtin_scenario("magazine")


@pytest.fixture
def random_tables():
    """1000 fully covered tables of 1-5 instances and 1-4 arms."""
    rng = np.random.default_rng(7)
    return [_random_table(rng) for _ in range(1000)]


@pytest.fixture
def reference_matrix():
    return load_success_matrix()


@pytest.fixture
def grid():
    return GridConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
