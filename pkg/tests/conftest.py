import numpy as np
import pytest

from domain.fock_space import CutoffPair, FrequencyLadder, build_basis


@pytest.fixture
def pair():
    return CutoffPair()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_ladder():
    return FrequencyLadder(0.5, 4)


@pytest.fixture
def small_basis(small_ladder):
    return build_basis(small_ladder, 2, 2)


@pytest.fixture
def flow_basis():
    """J=6 basis, deep enough for four renormalization steps."""
    return build_basis(FrequencyLadder(0.5, 6), 3, 2)
