import numpy as np
import pytest

from opfgrad.network import bundled_case


@pytest.fixture(scope="session")
def case9():
    return bundled_case("case9")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
