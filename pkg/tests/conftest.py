import numpy as np
import pytest

from dwisr import encoding, qspace, ridgelets


@pytest.fixture(scope="session")
def design64():
    return qspace.spiral_directions(64)


@pytest.fixture(scope="session")
def dictionary64(design64):
    return ridgelets.build_dictionary(design64)


@pytest.fixture(scope="session")
def basis5():
    return encoding.default_basis(5)


@pytest.fixture(scope="session")
def small_phantom(design64):
    return encoding.make_phantom((16, 16, 5), (1.0, 1.0, 1.0), design64)


@pytest.fixture(scope="session")
def tessellation():
    return ridgelets.icosphere(3)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
