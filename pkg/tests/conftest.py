import numpy as np
import pytest

from erdmd.models import ERConfig, ODESpec
from erdmd.systems import generate_lagged_linear, integrate_rk4


@pytest.fixture(scope="session")
def two_lag_series():
    """y_{n+1} = 0.5 y_n + 0.3 y_{n-4}, 500 generated steps."""
    return generate_lagged_linear([1, 5], [[[0.5]], [[0.3]]], n_steps=500, seed=0)


@pytest.fixture(scope="session")
def rotation_series():
    """One-lag linear data: a slowly decaying planar rotation."""
    theta = 0.3
    A = 0.99 * np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return generate_lagged_linear([1], [A], n_steps=300, seed=1)


@pytest.fixture(scope="session")
def lorenz_series():
    return integrate_rk4(ODESpec(kind="lorenz63", dt=0.01, t_span=(0.0, 22.0)))


@pytest.fixture
def er_config():
    def make(d=20, **overrides):
        return ERConfig(d=d, **{"workers": 1, **overrides})
    return make
