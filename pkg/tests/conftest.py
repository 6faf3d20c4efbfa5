import numpy as np
import pytest

from makoop.benchmark import generate_dataset
from makoop.koopman import default_dictionaries, fit_flat, fit_hier
from makoop.reduction import build_reduced


@pytest.fixture(scope="session")
def flat_model():
    data = generate_dataset("flat", 2000, seed=0)
    return fit_flat(data, default_dictionaries("flat", seed=0))


@pytest.fixture(scope="session")
def hier_data():
    return generate_dataset("hier", 2000, seed=0)


@pytest.fixture(scope="session")
def hier_model(hier_data):
    return fit_hier(hier_data, default_dictionaries("hier", seed=0))


@pytest.fixture(scope="session")
def hier_reduced(hier_model):
    return build_reduced(hier_model)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
