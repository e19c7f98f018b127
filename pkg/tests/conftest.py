import numpy as np
import pytest

from pws_msf.agent import galvanetto
from pws_msf.orbit import find_periodic_orbit

E_GALV = np.array([[0.0, 0.0], [1.0, 0.0]])


@pytest.fixture(scope="session")
def model():
    return galvanetto()


@pytest.fixture(scope="session")
def skeleton(model):
    return find_periodic_orbit(model, [0.0, 0.0], 1e-3)


@pytest.fixture(scope="session")
def skeleton_fine(model):
    return find_periodic_orbit(model, [0.0, 0.0], 1e-4)
