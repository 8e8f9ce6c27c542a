import numpy as np
import pytest

from numerics.domain_grid import build_grid
from numerics.entropy_profiles import GridDensity
from numerics.schemas.domain import Domain


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def interval_grid():
    return build_grid(Domain.of("Interval"), 64)


@pytest.fixture
def torus1_grid():
    return build_grid(Domain.of("Torus1"), 64)


@pytest.fixture
def uniform_interval(interval_grid) -> GridDensity:
    return GridDensity(grid=interval_grid, values=np.ones(interval_grid.shape))


@pytest.fixture
def cosine_bump():
    """Factory for 1 + a cos(2 pi x) on a unit-length 1D grid, normalized."""

    def make(grid, amplitude: float = 0.5) -> GridDensity:
        x = grid.axis_centers(0)
        return GridDensity.normalized(grid, 1.0 + amplitude * np.cos(2.0 * np.pi * x))

    return make
