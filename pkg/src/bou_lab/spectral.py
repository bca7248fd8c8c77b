"""Hermite eigenbasis of the OU semigroup and asymptotic-variance functionals.

The variance-adapted, orthonormal eigenfunctions are

    h_alpha(x) = prod_j He_{alpha_j}(x_j sqrt(2 mu)/sigma) / sqrt(alpha_j!),

with He_n the probabilist Hermite polynomials. They satisfy
T_t h_alpha = e^{-deg(alpha) mu t} h_alpha and are orthonormal in L2 of the
equilibrium measure, which makes the Parseval identity behind the
small-rate variance series literal.

Test functions are polynomials with exact coefficient lists; means and
derivatives under the equilibrium Gaussian are computed in closed form, and
quadrature provides the independent second route wherever the module
exposes a cross-check.
"""

from __future__ import annotations

import math
from functools import lru_cache
from itertools import product as _iproduct

import numpy as np
from scipy.integrate import quad

from .errors import ParameterError, ToleranceError
from .params import ModelParams, Regime
from . import ou

MultiIndex = tuple  # alpha: tuple of d nonnegative ints; degree = sum(alpha)

DEFAULT_MAX_DEGREE = 12


def index_degree(alpha) -> int:
    return int(sum(alpha))


def multi_indices(d: int, max_degree: int):
    """All multi-indices of length d with degree <= max_degree, 0 first."""
    out = []
    for alpha in _iproduct(range(max_degree + 1), repeat=d):
        if sum(alpha) <= max_degree:
            out.append(tuple(alpha))
    out.sort(key=lambda a: (sum(a), a))
    return out


@lru_cache(maxsize=128)
def hermite_poly_coeffs(n: int) -> tuple:
    """Monomial coefficients (ascending) of the probabilist He_n."""
    if n == 0:
        return (1.0,)
    if n == 1:
        return (0.0, 1.0)
    prev2, prev = hermite_poly_coeffs(n - 2), hermite_poly_coeffs(n - 1)
    out = [0.0] * (n + 1)
    for k, c in enumerate(prev):  # x * He_{n-1}
        out[k + 1] += c
    for k, c in enumerate(prev2):  # -(n-1) He_{n-2}
        out[k] -= (n - 1) * c
    return tuple(out)


def hermite_values(n_max: int, y: np.ndarray) -> np.ndarray:
    """He_0..He_{n_max} at points y, shape (n_max + 1, len(y)), by recurrence."""
    y = np.asarray(y, dtype=np.float64)
    vals = np.empty((n_max + 1, y.size))
    vals[0] = 1.0
    if n_max >= 1:
        vals[1] = y
    for n in range(1, n_max):
        vals[n + 1] = y * vals[n] - n * vals[n - 1]
    return vals


class SpectralFunction:
    """Polynomial test function with exact coefficients and derivatives.

    ``terms`` maps exponent multi-indices to coefficients. Instances are
    vectorized callables over (n, d) arrays and carry their polynomial
    degree, so quadrature routines can stay exact.
    """

    def __init__(self, terms: dict, d: int):
        self.d = int(d)
        clean = {}
        for powers, coeff in terms.items():
            powers = tuple(int(p) for p in powers)
            if len(powers) != self.d or any(p < 0 for p in powers):
                raise ParameterError(f"bad exponent multi-index {powers} for d={self.d}")
            c = float(coeff)
            if c != 0.0:
                clean[powers] = clean.get(powers, 0.0) + c
        self.terms = {k: v for k, v in sorted(clean.items()) if v != 0.0}

    # -- construction ------------------------------------------------------

    @classmethod
    def from_poly(cls, pairs, d: int) -> "SpectralFunction":
        """Build from [[coeff, multi-exponent], ...] as declared in configs."""
        terms = {}
        for coeff, powers in pairs:
            key = tuple(int(p) for p in powers)
            terms[key] = terms.get(key, 0.0) + float(coeff)
        return cls(terms, d)

    @classmethod
    def from_hermite(cls, pairs, params: ModelParams) -> "SpectralFunction":
        """Build sum of c_alpha h_alpha in the orthonormal eigenbasis of params."""
        a = params.hermite_scale
        total = cls({}, params.d)
        for coeff, alpha in pairs:
            alpha = tuple(int(i) for i in alpha)
            if len(alpha) != params.d:
                raise ParameterError(f"multi-index {alpha} does not match d={params.d}")
            factors = []
            for n in alpha:
                mono = hermite_poly_coeffs(n)
                norm = math.sqrt(math.factorial(n))
                factors.append({(m,): c * a ** m / norm for m, c in enumerate(mono) if c != 0.0})
            combined = {tuple(): float(coeff)}
            for fac in factors:
                nxt = {}
                for pw, c in combined.items():
                    for (m,), fc in fac.items():
                        key = pw + (m,)
                        nxt[key] = nxt.get(key, 0.0) + c * fc
                combined = nxt
            total = total + cls(combined, params.d)
        return total

    @classmethod
    def monomial(cls, powers, coeff: float = 1.0) -> "SpectralFunction":
        powers = tuple(int(p) for p in powers)
        return cls({powers: coeff}, len(powers))

    # -- algebra -----------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = SpectralFunction({(0,) * self.d: float(other)}, self.d)
        terms = dict(self.terms)
        for k, v in other.terms.items():
            terms[k] = terms.get(k, 0.0) + v
        return SpectralFunction(terms, self.d)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self + (-other)
        return self + other.scale(-1.0)

    def scale(self, c: float) -> "SpectralFunction":
        return SpectralFunction({k: c * v for k, v in self.terms.items()}, self.d)

    __rmul__ = scale
    __mul__ = None  # defined below to distinguish scalar and polynomial products

    def product(self, other: "SpectralFunction") -> "SpectralFunction":
        terms = {}
        for ka, va in self.terms.items():
            for kb, vb in other.terms.items():
                key = tuple(a + b for a, b in zip(ka, kb))
                terms[key] = terms.get(key, 0.0) + va * vb
        return SpectralFunction(terms, self.d)

    def _mul(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        return self.product(other)

    def derivative(self, i: int) -> "SpectralFunction":
        terms = {}
        for powers, coeff in self.terms.items():
            if powers[i] > 0:
                key = tuple(p - 1 if j == i else p for j, p in enumerate(powers))
                terms[key] = terms.get(key, 0.0) + coeff * powers[i]
        return SpectralFunction(terms, self.d)

    # -- evaluation and moments ---------------------------------------------

    @property
    def degree(self) -> int:
        return max((sum(p) for p in self.terms), default=0)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        out = np.zeros(pts.shape[0])
        for powers, coeff in self.terms.items():
            term = np.full(pts.shape[0], coeff)
            for j, p in enumerate(powers):
                if p:
                    term *= pts[:, j] ** p
            out += term
        return out

    def mean_phi(self, params: ModelParams) -> float:
        """<f, phi> in closed form from Gaussian monomial moments."""
        v = params.equilibrium_variance
        total = 0.0
        for powers, coeff in self.terms.items():
            m = coeff
            for p in powers:
                if p % 2 == 1:
                    m = 0.0
                    break
                if p:
                    m *= _double_factorial(p - 1) * v ** (p // 2)
            total += m
        return total

    def centered(self, params: ModelParams) -> "SpectralFunction":
        return self - self.mean_phi(params)


SpectralFunction.__mul__ = SpectralFunction._mul


def _double_factorial(n: int) -> float:
    out = 1.0
    while n > 1:
        out *= n
        n -= 2
    return out


# -- eigenbasis --------------------------------------------------------------

def eigenfunction_eval(alpha, x, params: ModelParams) -> float:
    """Orthonormal eigenfunction h_alpha at a single position."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return float(eigenfunction_values(alpha, pts, params)[0])


def eigenfunction_values(alpha, points: np.ndarray, params: ModelParams) -> np.ndarray:
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != params.d or any(a < 0 for a in alpha):
        raise ParameterError(f"bad multi-index {alpha} for d={params.d}")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    a = params.hermite_scale
    out = np.ones(pts.shape[0])
    for j, n in enumerate(alpha):
        if n:
            vals = hermite_values(n, a * pts[:, j])
            out *= vals[n] / math.sqrt(math.factorial(n))
    return out


def eigenfunction(alpha, params: ModelParams) -> SpectralFunction:
    """h_alpha as an explicit polynomial."""
    return SpectralFunction.from_hermite([[1.0, tuple(alpha)]], params)


# -- coefficients -------------------------------------------------------------

def hermite_coefficients(f, max_degree: int, params: ModelParams,
                         order: int = ou.DEFAULT_QUAD_ORDER,
                         tol: float | None = None) -> dict:
    """Orthonormal-basis coefficients of f~ = f - <f, phi> up to max_degree.

    Exact for polynomial f when the quadrature order covers deg(f) +
    max_degree. For non-polynomial f a Parseval tail estimate is checked
    against ``tol`` when given; failure raises ToleranceError.
    """
    if max_degree < 0:
        raise ParameterError("max_degree must be >= 0")
    if params.d > 3:
        raise ParameterError("hermite_coefficients supports d <= 3 (tensor quadrature)")
    degree = getattr(f, "degree", None)
    if degree is not None:
        need = (int(degree) + max_degree) // 2 + 1
        order = max(order, need)
    nodes, weights = ou.gauss_nodes_nd(params, order)
    fvals = np.asarray(f(nodes), dtype=np.float64)
    mean = float(weights @ fvals)
    centered = fvals - mean

    a = params.hermite_scale
    per_axis = [hermite_values(max_degree, a * nodes[:, j]) for j in range(params.d)]
    norms = [math.sqrt(math.factorial(n)) for n in range(max_degree + 1)]

    coeffs = {}
    for alpha in multi_indices(params.d, max_degree):
        if sum(alpha) == 0:
            continue
        basis = np.ones(len(nodes))
        for j, n in enumerate(alpha):
            if n:
                basis = basis * per_axis[j][n] / norms[n]
        coeffs[alpha] = float(weights @ (centered * basis))

    if tol is not None:
        f2mean = float(weights @ (centered * centered))
        tail = f2mean - sum(c * c for c in coeffs.values())
        if tail > tol:
            raise ToleranceError(
                f"Parseval tail {tail:.3e} beyond degree {max_degree} exceeds tol {tol:.1e}",
                estimate=coeffs, error_estimate=tail,
            )
    return coeffs


def parseval_gap(f, max_degree: int, params: ModelParams) -> float:
    """<phi, f~^2> minus the truncated coefficient sum (>= 0 up to rounding)."""
    ft = f.centered(params) if isinstance(f, SpectralFunction) else None
    if ft is None:
        raise ParameterError("parseval_gap expects a SpectralFunction")
    second = ft.product(ft).mean_phi(params)
    coeffs = hermite_coefficients(f, max_degree, params)
    return second - sum(c * c for c in coeffs.values())


# -- asymptotic variances ------------------------------------------------------

def sigma2_small(f, params: ModelParams, max_degree: int = DEFAULT_MAX_DEGREE) -> float:
    """Small-rate asymptotic variance via the Hermite series.

    sigma_f^2 = sum_alpha f_alpha^2 (1 + 2 lam p / (2 deg(alpha) mu - lambda_p)),
    finite in the small regime since every degree >= 1 term has a positive
    denominator. Exact (finite series) for polynomial f.
    """
    params.require_regime(Regime.SMALL, "sigma2_small")
    coeffs = hermite_coefficients(f, _effective_degree(f, max_degree), params)
    lam_p = params.lambda_p
    total = 0.0
    for alpha, c in coeffs.items():
        deg = index_degree(alpha)
        total += c * c * (1.0 + 2.0 * params.lam * params.p / (2.0 * deg * params.mu - lam_p))
    return total


def sigma2_small_integral(f, params: ModelParams,
                          order: int = ou.DEFAULT_QUAD_ORDER,
                          cutoff_density: float = 1e-14) -> float:
    """Small-rate variance by the defining time integral; oracle for the series.

    sigma_f^2 = <phi, f~^2> + 2 lam p int_0^inf <phi, (e^{(lambda_p/2) s} T_s f~)^2> ds,
    with T_s applied by quadrature and the s-integral truncated where the
    integrand falls below cutoff_density.
    """
    params.require_regime(Regime.SMALL, "sigma2_small_integral")
    if not isinstance(f, SpectralFunction):
        raise ParameterError("sigma2_small_integral expects a SpectralFunction")
    ft = f.centered(params)
    base = ft.product(ft).mean_phi(params)

    nodes, weights = ou.gauss_nodes_nd(params, order)
    lam_p = params.lambda_p
    rate = 2.0 * params.mu - lam_p

    def integrand(s: float) -> float:
        decay = math.exp(-params.mu * s)
        spread = math.sqrt(max(1.0 - decay * decay, 0.0))
        inner_nodes, inner_w = ou.gauss_nodes_nd(params, order)
        # T_s f~ at every outer node: outer m x inner q evaluation grid.
        pts = nodes[:, None, :] * decay + spread * inner_nodes[None, :, :]
        vals = ft(pts.reshape(-1, params.d)).reshape(len(nodes), len(inner_nodes))
        tsft = vals @ inner_w
        return math.exp(lam_p * s) * float(weights @ (tsft * tsft))

    g0 = integrand(0.0)
    scale = max(g0, 1.0)
    upper = max(5.0, math.log(scale / cutoff_density) / rate)
    val, _err = quad(integrand, 0.0, upper, limit=200, epsabs=1e-13, epsrel=1e-11)
    return base + 2.0 * params.lam * params.p * val


def sigma2_critical(f, params: ModelParams) -> float:
    """Critical-rate variance (lam p sigma^2 / mu) sum_i <df/dx_i, phi>^2.

    Derivatives are analytic for polynomial f; the companion
    sigma2_critical_hermite computes the same quantity through the
    unnormalized degree-1 Hermite coefficients by quadrature.
    """
    params.require_regime(Regime.CRITICAL, "sigma2_critical")
    if not isinstance(f, SpectralFunction):
        raise ParameterError("sigma2_critical expects a SpectralFunction")
    total = sum(f.derivative(i).mean_phi(params) ** 2 for i in range(params.d))
    return params.lam * params.p * params.sigma ** 2 / params.mu * total


def sigma2_critical_hermite(f, params: ModelParams,
                            order: int = ou.DEFAULT_QUAD_ORDER) -> float:
    """Hermite-form critical variance (4 lam p mu / sigma^2) sum_i f_{e_i}^2.

    f_{e_i} = <f~ x_i, phi> is the UNNORMALIZED monomial-convention
    coefficient, evaluated by quadrature (integration by parts route).
    """
    params.require_regime(Regime.CRITICAL, "sigma2_critical")
    degree = getattr(f, "degree", None)
    nodes, weights = ou.gauss_nodes_nd(
        params, max(order, (int(degree) + 2) // 2 + 1 if degree is not None else order))
    fvals = np.asarray(f(nodes), dtype=np.float64)
    centered = fvals - float(weights @ fvals)
    total = 0.0
    for i in range(params.d):
        ci = float(weights @ (centered * nodes[:, i]))
        total += ci * ci
    return 4.0 * params.lam * params.p * params.mu / params.sigma ** 2 * total


def gradient_mean(f, params: ModelParams,
                  order: int = ou.DEFAULT_QUAD_ORDER) -> np.ndarray:
    """(<df/dx_1, phi>, ..., <df/dx_d, phi>).

    Polynomials use the analytic derivative and exact Gaussian moments;
    other callables use integration by parts:
    <df/dx_i, phi> = (2 mu / sigma^2) <f x_i, phi>.
    """
    if isinstance(f, SpectralFunction):
        return np.array([f.derivative(i).mean_phi(params) for i in range(params.d)])
    nodes, weights = ou.gauss_nodes_nd(params, order)
    fvals = np.asarray(f(nodes), dtype=np.float64)
    factor = 2.0 * params.mu / params.sigma ** 2
    return factor * np.array([float(weights @ (fvals * nodes[:, i])) for i in range(params.d)])


def _effective_degree(f, max_degree: int) -> int:
    degree = getattr(f, "degree", None)
    return max_degree if degree is None else min(max_degree, int(degree))
