import numpy as np
import pytest
from hypothesis import settings

from sns import Grid, SimParams

settings.register_profile("sns", max_examples=40, deadline=None)
settings.load_profile("sns")


@pytest.fixture
def grid128():
    return Grid(1, 128)


@pytest.fixture
def params():
    return SimParams()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
