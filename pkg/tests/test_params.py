import math

import pytest

from bou_lab.errors import AmbiguousRegimeError, ParameterError
from bou_lab.params import ModelParams, Regime, as_position


def test_lambda_p_exact():
    params = ModelParams(d=1, sigma=1.0, mu=1.0, lam=3.0, p=0.75)
    assert params.lambda_p == (2 * 0.75 - 1) * 3.0


@pytest.mark.parametrize("mu, expected", [
    (1.0, Regime.SMALL),      # lambda_p = 0.5 < 2
    (0.25, Regime.CRITICAL),  # lambda_p = 0.5 = 2 mu
    (0.1, Regime.LARGE),      # lambda_p = 0.5 > 0.2
])
def test_regime_classification(mu, expected):
    assert ModelParams(d=1, sigma=1.0, mu=mu, lam=1.0, p=0.75).regime is expected


def test_critical_within_relative_tolerance():
    mu = 0.25 * (1.0 + 1e-13)
    assert ModelParams(d=1, sigma=1.0, mu=mu, lam=1.0, p=0.75).regime is Regime.CRITICAL


def test_ambiguous_band_requires_pin():
    mu = 0.25 * (1.0 + 1e-10)
    with pytest.raises(AmbiguousRegimeError):
        ModelParams(d=1, sigma=1.0, mu=mu, lam=1.0, p=0.75)
    pinned = ModelParams(d=1, sigma=1.0, mu=mu, lam=1.0, p=0.75,
                         pinned_regime=Regime.SMALL)
    assert pinned.regime is Regime.SMALL


def test_pin_cannot_contradict_clear_parameters():
    with pytest.raises(AmbiguousRegimeError):
        ModelParams(d=1, sigma=1.0, mu=1.0, lam=1.0, p=0.75,
                    pinned_regime=Regime.LARGE)


@pytest.mark.parametrize("kwargs", [
    {"p": 0.5}, {"p": 0.4}, {"p": 1.1},
    {"sigma": 0.0}, {"mu": -1.0}, {"lam": math.nan}, {"d": 0},
])
def test_invalid_parameters_rejected(kwargs):
    base = dict(d=1, sigma=1.0, mu=1.0, lam=1.0, p=0.75)
    base.update(kwargs)
    with pytest.raises(ParameterError):
        ModelParams(**base)


def test_equilibrium_variance():
    params = ModelParams(d=2, sigma=2.0, mu=0.5, lam=1.0, p=0.8)
    assert params.equilibrium_variance == pytest.approx(4.0)


def test_as_position_validates():
    params = ModelParams(d=2, sigma=1.0, mu=1.0, lam=1.0, p=0.75)
    assert as_position([1.0, 2.0], params).shape == (2,)
    with pytest.raises(ParameterError):
        as_position([1.0], params)
    with pytest.raises(ParameterError):
        as_position([1.0, math.inf], params)
