import numpy as np
import pytest

from pathdens import coeffs, flow
from pathdens.roughpath import sample_brownian
from pathdens.timegrid import MeasureSpec, build_grid


@pytest.fixture
def unit_measure():
    return MeasureSpec(horizon=1.0)


@pytest.fixture
def grid64(unit_measure):
    return build_grid(unit_measure, 64)


def make_bundle(field, x0, grid, seed=0):
    b = sample_brownian(grid, field.d, seed)
    return flow.solve_sde(field, x0, np.diff(b, axis=0), grid)


@pytest.fixture
def hormander_bundle(grid64):
    field = coeffs.HormanderExample3D()
    return field, make_bundle(field, [0.2, -0.1, 0.3], grid64, seed=3)
