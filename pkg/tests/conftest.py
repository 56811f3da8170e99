import numpy as np
import pytest

from meancurv import ShapeSpec, make_grid, sample_function


def cone_formula(p):
    if p.shape[1] == 1:
        return np.abs(p[:, 0])
    return np.hypot(p[:, 0], p[:, 1])


def hemisphere_formula(R):
    def hemi(p):
        return -np.sqrt(R * R - (p ** 2).sum(axis=1))
    return hemi


@pytest.fixture(scope="session")
def unit_disk_64():
    grid, mask = make_grid(ShapeSpec.disk((0.0, 0.0), 1.0), 64)
    return grid, mask


@pytest.fixture(scope="session")
def cone_64(unit_disk_64):
    grid, mask = unit_disk_64
    return sample_function(cone_formula, grid, mask)


@pytest.fixture(scope="session")
def interval_100():
    grid, mask = make_grid(ShapeSpec.interval(-1.0, 1.0), 100)
    return grid, mask
