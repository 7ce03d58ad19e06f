import numpy as np
import pytest

from metascreen.cell_library import TableGrids, build_table, grid_range
from metascreen.core import make_wave_context
from metascreen.duct_model import UnitCellGeometry

DESIGN_FREQUENCY = 6000.0


@pytest.fixture(scope='session')
def geometry():
    return UnitCellGeometry().validate()


@pytest.fixture(scope='session')
def wave():
    return make_wave_context(DESIGN_FREQUENCY)


@pytest.fixture(scope='session')
def design_table(geometry):
    """h1 x w2 at the default w, design frequency and its neighbours."""
    grids = TableGrids.from_mm(h1_mm=grid_range(1.0, 35.0, 0.5), w2_mm=grid_range(1.0, 5.0, 0.1), w_mm=[8.0])
    return build_table(geometry, grids, [5500.0, DESIGN_FREQUENCY, 6500.0])


@pytest.fixture(scope='session')
def coarse_table(geometry):
    grids = TableGrids.from_mm(h1_mm=grid_range(1.0, 35.0, 1.0), w2_mm=grid_range(1.0, 5.0, 0.5), w_mm=[8.0])
    return build_table(geometry, grids, [5500.0, DESIGN_FREQUENCY, 6500.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)
