import numpy as np
import pytest

from chlab import Grid, ModelSpec


@pytest.fixture
def small_grid():
    return Grid(n=16, dt=0.005, T=0.1)


@pytest.fixture
def linear_model():
    return ModelSpec(f_coeffs=(0.0, 0.0, 0.0, 0.0), sigma_preset="constant",
                     sigma_param=1.0, u0_coeffs=(0.0,), linear_test=True)


@pytest.fixture
def decoupled_model():
    # no drift, no noise: every mode evolves by the bare semigroup
    return ModelSpec(f_coeffs=(0.0, 0.0, 0.0, 0.0), sigma_preset="constant",
                     sigma_param=0.0, u0_coeffs=(0.0, 1.0), linear_test=True)


@pytest.fixture
def cubic_model():
    return ModelSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
