import numpy as np
import pytest

from conesurf import builtin_octagon, builtin_slit_tori


@pytest.fixture(scope="session")
def octagon():
    return builtin_octagon()


@pytest.fixture(scope="session")
def slit_tori():
    return builtin_slit_tori()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
