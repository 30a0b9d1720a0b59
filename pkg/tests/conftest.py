import numpy as np
import pytest

from efdm.fda import FunctionalSample, Grid
from efdm.simgen import generate, paper_defaults


@pytest.fixture
def unit_grid():
    return Grid.uniform(0.0, 1.0, 101)


@pytest.fixture
def fine_grid():
    return Grid.uniform(0.0, 1.0, 1001)


@pytest.fixture
def bump_grid():
    return Grid.uniform(-8.0, 8.0, 250)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def standard_sample():
    return generate(paper_defaults("standard"), 30, seed=11)


def bump(grid: Grid, center: float = 0.0, height: float = 1.0, width: float = 1.0) -> np.ndarray:
    t = grid.points
    return height * np.exp(-0.5 * ((t - center) / width) ** 2)


def sample_of(grid: Grid, rows) -> FunctionalSample:
    return FunctionalSample(grid, np.vstack(rows))
