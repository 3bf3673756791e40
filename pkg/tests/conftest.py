import numpy as np
import pytest

from secureabm.kernels import available_backends
from secureabm.population import PopulationSpec, generate_population

BACKENDS = sorted(available_backends())


@pytest.fixture(params=BACKENDS)
def kernel_module(request):
    return available_backends()[request.param]


@pytest.fixture(scope="session")
def small_population():
    return generate_population(PopulationSpec(n_agents=120), seed=3)


@pytest.fixture
def fresh_population():
    def make(n=120, seed=3):
        return generate_population(PopulationSpec(n_agents=n), seed=seed)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
