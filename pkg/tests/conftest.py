import numpy as np
import pytest

from nonlocal_rd.grid import build_grid
from nonlocal_rd.kernels import KernelSpec, assemble_operator


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid1d():
    return build_grid(1, 2.0, 41)


@pytest.fixture
def grid2d():
    return build_grid(2, (2.0, 1.0), (13, 7))


@pytest.fixture
def gauss_op_1d(grid1d):
    return assemble_operator(grid1d, KernelSpec("gaussian", eps=0.5))
