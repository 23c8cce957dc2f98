import pytest

from uwnet.approxfit import case_grid
from uwnet.waterfill import sweep_surface


@pytest.fixture(scope="session")
def case1_surface():
    l, C = case_grid("1")
    return sweep_surface(l, C)
