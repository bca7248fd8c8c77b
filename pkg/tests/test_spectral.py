import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bou_lab import ou
from bou_lab.errors import RegimeError
from bou_lab.params import ModelParams
from bou_lab.spectral import (SpectralFunction, eigenfunction, eigenfunction_eval,
                              gradient_mean, hermite_coefficients, multi_indices,
                              parseval_gap, sigma2_critical, sigma2_critical_hermite,
                              sigma2_small, sigma2_small_integral)

PANEL = [
    [[1.0, [1]]],                                # x
    [[1.0, [2]]],                                # x^2
    [[1.0, [2]], [1.0, [1]]],                    # x^2 + x
    [[1.0, [3]], [-1.0, [1]]],                   # x^3 - x
    [[0.5, [4]], [1.0, [2]], [2.0, [0]]],        # 0.5 x^4 + x^2 + 2
]


def panel_functions():
    return [SpectralFunction.from_poly(spec, 1) for spec in PANEL]


def test_constant_eigenfunction(small_params):
    for x in (-2.0, 0.0, 3.7):
        assert eigenfunction_eval((0,), [x], small_params) == 1.0


def test_degree_one_eigenfunction_is_identity_at_matched_scale():
    # sqrt(2 mu)/sigma = 1 so h_1(x) = x.
    params = ModelParams(d=1, sigma=1.0, mu=0.5, lam=1.0, p=0.75)
    for x in (-1.5, 0.2, 2.0):
        assert eigenfunction_eval((1,), [x], params) == pytest.approx(x, abs=1e-14)


def test_eigenfunctions_orthonormal(small_params):
    # <h_a h_b, phi> = delta_ab by quadrature, degrees up to 6.
    idxs = [a for a in multi_indices(1, 6)]
    nodes, weights = ou.gauss_nodes_nd(small_params, 64)
    from bou_lab.spectral import eigenfunction_values

    vals = {a: eigenfunction_values(a, nodes, small_params) for a in idxs}
    for a in idxs:
        for b in idxs:
            inner = float(weights @ (vals[a] * vals[b]))
            assert inner == pytest.approx(1.0 if a == b else 0.0, abs=1e-9)


def test_eigenrelation(small_params):
    # T_t h_alpha = e^{-deg mu t} h_alpha, degrees <= 5.
    for deg in range(1, 6):
        h = eigenfunction((deg,), small_params)
        for t in (0.25, 1.0, 4.0):
            factor = math.exp(-deg * small_params.mu * t)
            for x in (-2.0, -0.5, 0.0, 1.0, 3.0):
                lhs = ou.ou_semigroup_apply(h, t, [x], small_params)
                rhs = factor * h(np.array([[x]]))[0]
                assert abs(lhs - rhs) <= 1e-8


def test_hermite_coefficients_constant_vanish(small_params):
    const = SpectralFunction.from_poly([[3.25, [0]]], 1)
    coeffs = hermite_coefficients(const, 6, small_params)
    assert all(abs(v) < 1e-13 for v in coeffs.values())


def test_hermite_coefficients_linear():
    params = ModelParams(d=1, sigma=1.0, mu=0.5, lam=1.0, p=0.75)
    coeffs = hermite_coefficients(SpectralFunction.monomial((1,)), 4, params)
    assert coeffs[(1,)] == pytest.approx(1.0, abs=1e-13)
    assert all(abs(v) < 1e-13 for a, v in coeffs.items() if a != (1,))


def test_parseval_identity(small_params):
    # Sum of squared coefficients equals <phi, f~^2> for degree <= 6 panel.
    for f in panel_functions():
        assert abs(parseval_gap(f, 6, small_params)) < 1e-9


def test_poly_coefficients_beyond_degree_vanish(small_params):
    f = SpectralFunction.from_poly([[1.0, [3]], [2.0, [1]]], 1)
    coeffs = hermite_coefficients(f, 9, small_params)
    high = [v for a, v in coeffs.items() if sum(a) > 3]
    assert all(abs(v) < 1e-12 for v in high)


def test_sigma2_small_single_mode(small_params):
    # Lone degree-1 coefficient: 1 + 2 lam p/(2 mu - lambda_p) = 1 + 1.5/1.5 = 2.
    h1 = eigenfunction((1,), small_params)
    assert sigma2_small(h1, small_params) == pytest.approx(2.0, abs=1e-12)


def test_sigma2_small_constant_is_zero(small_params):
    const = SpectralFunction.from_poly([[5.0, [0]]], 1)
    assert sigma2_small(const, small_params) == pytest.approx(0.0, abs=1e-12)


def test_sigma2_small_wrong_regime(critical_params):
    with pytest.raises(RegimeError):
        sigma2_small(SpectralFunction.monomial((1,)), critical_params)
    with pytest.raises(RegimeError):
        sigma2_small_integral(SpectralFunction.monomial((1,)), critical_params)


def test_sigma2_small_example_value(small_params):
    # f = x^2 + x with standard-normal equilibrium: coefficients 1 (deg 1)
    # and sqrt(2) (deg 2), so sigma^2 = 2 + 2 (1 + 1.5/3.5) = 2 + 20/7.
    f = SpectralFunction.from_poly([[1.0, [2]], [1.0, [1]]], 1)
    assert sigma2_small(f, small_params) == pytest.approx(2.0 + 20.0 / 7.0, rel=1e-12)


def test_sigma2_small_matches_integral_oracle(small_params):
    for f in panel_functions():
        series = sigma2_small(f, small_params)
        integral = sigma2_small_integral(f, small_params)
        if series == 0.0:
            assert abs(integral) < 1e-10
        else:
            assert abs(series - integral) <= 1e-6 * abs(series)


def test_sigma2_monotonicity(small_params):
    # sigma_f^2 >= <phi, f~^2> (the integral term is nonnegative).
    for f in panel_functions():
        ft = f.centered(small_params)
        base = ft.product(ft).mean_phi(small_params)
        assert sigma2_small(f, small_params) >= base - 1e-12


def test_sigma2_critical_example(critical_params):
    # f = x, mu = 0.25, sigma = 1, lam = 1, p = 0.75: (0.75/0.25) * 1 = 3.
    assert sigma2_critical(SpectralFunction.monomial((1,)), critical_params) == \
        pytest.approx(3.0, abs=1e-14)


def test_sigma2_critical_even_function_vanishes(critical_params):
    assert sigma2_critical(SpectralFunction.monomial((2,)), critical_params) == \
        pytest.approx(0.0, abs=1e-14)


def test_sigma2_critical_paths_agree(critical_params):
    for spec in PANEL:
        f = SpectralFunction.from_poly(spec, 1)
        a = sigma2_critical(f, critical_params)
        b = sigma2_critical_hermite(f, critical_params)
        assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_sigma2_critical_wrong_regime(small_params):
    with pytest.raises(RegimeError):
        sigma2_critical(SpectralFunction.monomial((1,)), small_params)


def test_gradient_mean_examples(small_params):
    params2 = ModelParams(d=2, sigma=1.0, mu=1.0, lam=1.0, p=0.75)
    f = SpectralFunction.monomial((1, 0))
    assert gradient_mean(f, params2) == pytest.approx([1.0, 0.0], abs=1e-14)
    assert gradient_mean(SpectralFunction.monomial((2,)), small_params) == \
        pytest.approx([0.0], abs=1e-14)
    # f = x^3, mu = 1, sigma^2 = 2: <3 x^2, phi> = 3 sigma^2/(2 mu) = 3.
    assert gradient_mean(SpectralFunction.monomial((3,)), small_params) == \
        pytest.approx([3.0], abs=1e-12)


def test_gradient_mean_quadrature_path_matches(small_params):
    f = SpectralFunction.from_poly([[1.0, [3]], [0.5, [2]], [-2.0, [1]]], 1)
    exact = gradient_mean(f, small_params)
    by_parts = gradient_mean(lambda pts: f(pts), small_params)
    assert by_parts == pytest.approx(exact, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(-4, 4).filter(lambda v: abs(v) > 1e-3),
       spec_idx=st.integers(0, len(PANEL) - 1))
def test_scaling_consistency(c, spec_idx):
    # c f multiplies sigma_f^2 by c^2 and gradient_mean by c.
    small = ModelParams(d=1, sigma=math.sqrt(2.0), mu=1.0, lam=1.0, p=0.75)
    critical = ModelParams(d=1, sigma=1.0, mu=0.25, lam=1.0, p=0.75)
    f = SpectralFunction.from_poly(PANEL[spec_idx], 1)
    fc = f.scale(c)
    assert sigma2_small(fc, small) == pytest.approx(c * c * sigma2_small(f, small), rel=1e-9, abs=1e-12)
    assert sigma2_critical(fc, critical) == pytest.approx(c * c * sigma2_critical(f, critical), rel=1e-12, abs=1e-12)
    assert gradient_mean(fc, small) == pytest.approx(c * gradient_mean(f, small), rel=1e-12, abs=1e-12)


def test_from_hermite_round_trip(small_params):
    # Build f from Hermite coefficients and recover them by quadrature.
    f = SpectralFunction.from_hermite([[0.7, (1,)], [-1.2, (3,)]], small_params)
    coeffs = hermite_coefficients(f, 5, small_params)
    assert coeffs[(1,)] == pytest.approx(0.7, abs=1e-12)
    assert coeffs[(3,)] == pytest.approx(-1.2, abs=1e-12)
    assert all(abs(v) < 1e-12 for a, v in coeffs.items() if a not in ((1,), (3,)))


def test_multidimensional_coefficients():
    params = ModelParams(d=2, sigma=1.0, mu=0.5, lam=1.0, p=0.75)
    # f(x, y) = x y = h_{(1,1)} at this scale.
    f = SpectralFunction.monomial((1, 1))
    coeffs = hermite_coefficients(f, 3, params)
    assert coeffs[(1, 1)] == pytest.approx(1.0, abs=1e-12)
    off = [v for a, v in coeffs.items() if a != (1, 1)]
    assert all(abs(v) < 1e-12 for v in off)
