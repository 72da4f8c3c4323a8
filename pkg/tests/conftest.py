from __future__ import annotations

import numpy as np
import pytest

from slowfront.potential import make_quartic, well_constants

EPS = 0.05


@pytest.fixture(scope="session")
def quartic():
    return make_quartic()


@pytest.fixture(scope="session")
def qwc(quartic):
    return well_constants(quartic)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
