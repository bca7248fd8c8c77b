import math

import pytest

from bou_lab.params import ModelParams


@pytest.fixture
def small_params():
    """mu=1, sigma^2=2: equilibrium is the standard normal; lambda_p = 0.5."""
    return ModelParams(d=1, sigma=math.sqrt(2.0), mu=1.0, lam=1.0, p=0.75)


@pytest.fixture
def critical_params():
    """lambda_p = 2 mu = 0.5."""
    return ModelParams(d=1, sigma=1.0, mu=0.25, lam=1.0, p=0.75)


@pytest.fixture
def large_params():
    """p = 1 Yule tree, gamma = 1/2, sigma^2 = mu so E H_inf^2 = 2 gamma = 1."""
    return ModelParams(d=1, sigma=0.5, mu=0.25, lam=1.0, p=1.0)
