"""Closed-form and semi-analytic ground truth for the branching system.

Covers the Galton-Watson side (Laplace transform of the population count,
law of the normalized limit, first and fourth population moments), the
moments of the position-sum martingale limit in the large-rate regime, and
a deterministic time-marching evaluation of the moment recursion for
E_x <X_t, f>^k, k <= 4, in one dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.integrate import quad

from .errors import ParameterError, ToleranceError, UnsupportedError
from .params import ModelParams, Regime
from .spectral import SpectralFunction, hermite_values
from . import ou


@dataclass(frozen=True)
class GWLaw:
    """Branching-rate parameters of the population count process."""

    lam: float
    p: float

    def __post_init__(self):
        if not (0.5 < self.p <= 1.0) or self.lam <= 0:
            raise ParameterError(f"need lam > 0 and p in (1/2, 1], got lam={self.lam}, p={self.p}")

    @classmethod
    def from_params(cls, params: ModelParams) -> "GWLaw":
        return cls(lam=params.lam, p=params.p)

    @property
    def lambda_p(self) -> float:
        return (2.0 * self.p - 1.0) * self.lam

    @property
    def p_e(self) -> float:
        """Extinction probability (1 - p) / p."""
        return (1.0 - self.p) / self.p


def gw_laplace(t: float, theta: float, law: GWLaw) -> float:
    """E exp(-theta |X_t|), by the closed-form solution of the Riccati ODE.

    With E = e^{-lambda_p t} and u = e^{-theta}:

        w = [(1-p)(u - 1) - E (p u - (1-p))] / [p (u - 1) - E (p u - (1-p))].
    """
    if t < 0 or theta < 0 or not (math.isfinite(t) and math.isfinite(theta)):
        raise ParameterError(f"need finite t, theta >= 0, got t={t!r}, theta={theta!r}")
    return _gw_laplace_unchecked(t, theta, law)


def _gw_laplace_unchecked(t: float, theta: float, law: GWLaw) -> float:
    # Separate entry point so finite-difference stencils may probe theta < 0
    # slightly (the closed form is analytic near 0).
    if theta == 0.0:
        return 1.0
    p = law.p
    decay = math.exp(-law.lambda_p * t)
    u = math.exp(-theta)
    tail = decay * (p * u - (1.0 - p))
    num = (1.0 - p) * (u - 1.0) - tail
    den = p * (u - 1.0) - tail
    return num / den


def vinf_conditional_cdf(v: float, law: GWLaw) -> float:
    """CDF of V_infinity conditioned on survival: Exp with rate (2p-1)/p."""
    if v < 0:
        raise ParameterError(f"v must be >= 0, got {v!r}")
    rate = (2.0 * law.p - 1.0) / law.p
    return -math.expm1(-rate * v)


def population_moment(t: float, k: int, law: GWLaw) -> float:
    """E |X_t|^k for k = 1 (growth law) and k = 4 (closed form)."""
    if t < 0 or not math.isfinite(t):
        raise ParameterError(f"t must be finite and >= 0, got {t!r}")
    growth = math.exp(law.lambda_p * t)
    if k == 1:
        return growth
    if k == 4:
        p = law.p
        e1 = growth
        poly = (-1.0
                + 2.0 * (-4.0 + 7.0 * e1) * p
                + (8.0 + 16.0 * e1 - 36.0 * e1 ** 2) * p ** 2
                + 8.0 * e1 * (-2.0 + 3.0 * e1 ** 2) * p ** 3)
        return e1 * poly / (2.0 * p - 1.0) ** 3
    raise UnsupportedError(f"population_moment supports k in {{1, 4}}, got {k}")


def gw_fourth_moment_fd(t: float, law: GWLaw, h: float | None = None) -> float:
    """E |X_t|^4 by fourth-order central differencing of the Laplace transform.

    Independent cross-check of the closed form: E |X_t|^4 = w''''(t, 0).
    The default step shrinks with the population scale e^{lambda_p t},
    balancing stencil truncation (grows with the higher moments) against
    round-off in the h^{-4} division; a Richardson pass removes the
    leading truncation term.
    """
    if h is None:
        h = 0.01 * math.exp(-0.75 * law.lambda_p * t)
    stencil = (-1.0 / 6.0, 2.0, -13.0 / 2.0, 28.0 / 3.0, -13.0 / 2.0, 2.0, -1.0 / 6.0)

    def fourth(hh: float) -> float:
        vals = [_gw_laplace_unchecked(t, m * hh, law) for m in range(-3, 4)]
        return sum(c * v for c, v in zip(stencil, vals)) / hh ** 4

    coarse, fine = fourth(h), fourth(h / 2.0)
    return (16.0 * fine - coarse) / 15.0


def hinf_moment(k: int, params: ModelParams) -> float:
    """Moments of the limit H_infinity of the position-sum martingale.

    Available for binary-certain branching (p = 1) in one dimension, large
    regime. E H_infinity^k = g_k(gamma) (sigma^2/mu)^{k/2} with gamma =
    (lambda_p/mu - 2)^{-1}; the law is symmetric, so odd moments vanish.
    g_2(gamma) = 2 gamma is exact (it is the limit of the closed-form
    E_0 H_t^2 below). The quoted rational expressions for the fourth and
    sixth moments carry the other common spatial normalization, a uniform
    factor 2^{k/2} above the convention fixed by g_2; they are divided out
    here so the family is consistent. The k = 4 coefficient is verified
    against the moment recursion at several gamma and against simulation.
    """
    if params.d != 1:
        raise UnsupportedError("hinf_moment is available for d = 1 only")
    if params.p != 1.0:
        raise UnsupportedError("hinf_moment formulas are available for p = 1 only")
    params.require_regime(Regime.LARGE, "hinf_moment")
    if not (isinstance(k, int) and 1 <= k <= 6):
        raise UnsupportedError(f"hinf_moment supports integer k in 1..6, got {k!r}")
    if k % 2 == 1:
        return 0.0  # the law is symmetric; odd moments vanish
    g = 1.0 / (params.lambda_p / params.mu - 2.0)
    scale = (params.sigma ** 2 / params.mu) ** (k // 2)
    if k == 2:
        return scale * 2.0 * g
    if k == 4:
        num = 96.0 * g ** 2 * (16.0 + 39.0 * g + 30.0 * g ** 2 + 8.0 * g ** 3)
        den = 9.0 + 27.0 * g + 26.0 * g ** 2 + 8.0 * g ** 3
        return scale * num / den / 4.0
    num = 1440.0 * g ** 3 * (36847.0 + 285675.0 * g + 948012.0 * g ** 2
                             + 1760420.0 * g ** 3 + 2005408.0 * g ** 4
                             + 1441120.0 * g ** 5 + 642112.0 * g ** 6
                             + 163584.0 * g ** 7 + 18432.0 * g ** 8)
    den = ((1.0 + g) ** 2 * (3.0 + 2.0 * g) * (5.0 + 4.0 * g) * (5.0 + 6.0 * g)
           * (5.0 + 8.0 * g) * (6.0 + 17.0 * g + 12.0 * g ** 2))
    return scale * num / den / 8.0


def martingale_second_moment(t: float, params: ModelParams) -> float:
    """Exact E_0 H_t^2, from the population second-moment display.

    E_0 H_t^2 = v [ e^{(2mu - lp) t} - e^{-lp t}
                    + 2 lam p ( (1 - e^{(2mu - lp) t}) / (lp - 2mu)
                               - (1 - e^{-lp t}) / lp ) ],
    v = sigma^2 / (2 mu). Valid in the large regime (lp > 2 mu).
    """
    params.require_regime(Regime.LARGE, "martingale_second_moment")
    v = params.equilibrium_variance
    lp = params.lambda_p
    mu = params.mu
    e_a = math.exp((2.0 * mu - lp) * t)
    e_b = math.exp(-lp * t)
    lam_p_term = 2.0 * params.lam * params.p * ((1.0 - e_a) / (lp - 2.0 * mu)
                                                - (1.0 - e_b) / lp)
    return v * (e_a - e_b + lam_p_term)


# ---------------------------------------------------------------------------
# Moment recursion for E_x <X_t, f>^k, d = 1, k <= 4
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Discretization of the Volterra time integral.

    The time step is step_scale / lambda_p (trapezoid rule); the spatial
    grid is Gauss-Hermite of the given order. ``richardson`` verifies with
    a halved step and extrapolates.
    """

    step_scale: float = 0.01
    order: int = 64
    richardson: bool = True


class _HermiteGrid:
    """Orthonormal eigenbasis sampled on an equilibrium quadrature grid."""

    def __init__(self, params: ModelParams, n_modes: int, order: int):
        self.params = params
        self.n_modes = n_modes
        order = max(order, n_modes + 1)
        self.nodes, self.weights = ou.gauss_nodes(params, order)
        vals = hermite_values(n_modes, params.hermite_scale * self.nodes)
        norms = np.array([math.sqrt(math.factorial(n)) for n in range(n_modes + 1)])
        self.basis = vals / norms[:, None]          # (n_modes + 1, q)
        self.decay_rates = params.mu * np.arange(n_modes + 1)

    def project(self, grid_values: np.ndarray) -> np.ndarray:
        return self.basis @ (self.weights * grid_values)

    def evaluate(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self.basis

    def evaluate_at(self, coeffs: np.ndarray, x: float) -> float:
        vals = hermite_values(self.n_modes, self.params.hermite_scale * np.array([x]))
        norms = np.array([math.sqrt(math.factorial(n)) for n in range(self.n_modes + 1)])
        return float(coeffs @ (vals[:, 0] / norms))


def _march_moments(f: SpectralFunction, k: int, t: float, params: ModelParams,
                   grid: _HermiteGrid, n_steps: int) -> dict:
    """Trapezoid march of the moment recursion; returns coefficient vectors.

    m_k(x, t) = e^{lp t} T_t f^k(x)
              + lam p int_0^t e^{lp (t-s)} T_{t-s} [ sum_{j=1}^{k-1} C(k,j)
                        m_j(., s) m_{k-j}(., s) ](x) ds.

    The integral is carried in eigenbasis coefficients, where
    e^{lp tau} T_tau is the diagonal semigroup U(tau) = diag
    e^{(lp - n mu) tau}; the incremental trapezoid update
    I(t + dt) = U(dt) (I(t) + dt/2 c(t)) + dt/2 c(t + dt) is exact in U.
    """
    lp = params.lambda_p
    rates = lp - grid.decay_rates                     # (n_modes + 1,)
    base = {}
    fvals = f(grid.nodes[:, None])
    power = np.ones_like(fvals)
    for j in range(1, k + 1):
        power = power * fvals
        base[j] = grid.project(power)

    if t == 0.0 or k == 1:
        coeffs = {j: base[j] * np.exp(rates * t) for j in range(1, k + 1)}
        return coeffs

    dt = t / n_steps
    u_dt = np.exp(rates * dt)
    lam_p = params.lam * params.p

    def cross_coeffs(vals_by_order: dict, order: int) -> np.ndarray:
        total = np.zeros_like(grid.nodes)
        for j in range(1, order):
            total = total + comb(order, j) * vals_by_order[j] * vals_by_order[order - j]
        return grid.project(lam_p * total)

    integral = {j: np.zeros(grid.n_modes + 1) for j in range(2, k + 1)}
    coeffs = {j: base[j].copy() for j in range(1, k + 1)}   # at s = 0
    vals = {j: grid.evaluate(coeffs[j]) for j in range(1, k + 1)}

    s = 0.0
    for _ in range(n_steps):
        cross_old = {j: cross_coeffs(vals, j) for j in range(2, k + 1)}
        s += dt
        u_s = np.exp(rates * s)
        coeffs[1] = base[1] * u_s
        vals[1] = grid.evaluate(coeffs[1])
        for j in range(2, k + 1):
            half = integral[j] + 0.5 * dt * cross_old[j]
            integral[j] = u_dt * half
            coeffs[j] = base[j] * u_s + integral[j]
            vals[j] = grid.evaluate(coeffs[j])
            # complete the trapezoid with the new endpoint
            new_cross = cross_coeffs(vals, j)
            integral[j] = integral[j] + 0.5 * dt * new_cross
            coeffs[j] = base[j] * u_s + integral[j]
            vals[j] = grid.evaluate(coeffs[j])
    return coeffs


def moment_recursion_detail(f: SpectralFunction, k: int, t: float,
                            params: ModelParams, x: float = 0.0,
                            grid: GridSpec = GridSpec()) -> tuple[float, float]:
    """E_x <X_t, f>^k with an estimated discretization error (step halving)."""
    if params.d != 1:
        raise UnsupportedError("moment_recursion is implemented for d = 1 only")
    if not (isinstance(k, int) and 1 <= k <= 4):
        raise UnsupportedError(f"moment_recursion supports k in 1..4, got {k!r}")
    if not isinstance(f, SpectralFunction):
        raise ParameterError("moment_recursion expects a polynomial SpectralFunction")
    if t < 0 or not math.isfinite(t):
        raise ParameterError(f"t must be finite and >= 0, got {t!r}")

    n_modes = max(1, k * f.degree)
    hgrid = _HermiteGrid(params, n_modes, max(grid.order, n_modes + 1))
    if k == 1 or t == 0.0:
        coeffs = _march_moments(f, k, t, params, hgrid, 1)
        return hgrid.evaluate_at(coeffs[k], x), 0.0

    n_steps = max(2, int(math.ceil(t * params.lambda_p / grid.step_scale)))
    coarse = hgrid.evaluate_at(_march_moments(f, k, t, params, hgrid, n_steps)[k], x)
    if not grid.richardson:
        return coarse, math.nan
    fine = hgrid.evaluate_at(_march_moments(f, k, t, params, hgrid, 2 * n_steps)[k], x)
    value = (4.0 * fine - coarse) / 3.0
    err = abs(fine - coarse) / 3.0
    return value, err


def moment_recursion(f: SpectralFunction, k: int, t: float, params: ModelParams,
                     x: float = 0.0, grid: GridSpec = GridSpec(),
                     tol: float | None = None) -> float:
    """E_x <X_t, f>^k by deterministic time marching (d = 1, k <= 4).

    When ``tol`` is given and the step-halving error estimate exceeds it, a
    ToleranceError carrying both estimates is raised.
    """
    value, err = moment_recursion_detail(f, k, t, params, x=x, grid=grid)
    if tol is not None and not math.isnan(err):
        scale = max(1.0, abs(value))
        if err > tol * scale:
            raise ToleranceError(
                f"moment recursion error estimate {err:.3e} exceeds tol {tol:.1e}",
                estimate=value, error_estimate=err,
            )
    return value


def second_moment_quadrature(f: SpectralFunction, t: float, params: ModelParams,
                             x: float = 0.0, order: int = ou.DEFAULT_QUAD_ORDER) -> float:
    """Explicit oracle for E_x <X_t, f~>^2 (f~ = f - <f, phi>), d = 1.

    E_x <X_t, f~>^2 = e^{lp t} T_t f~^2(x)
        + 2 lam p int_0^t e^{lp (t+s)} T_{t-s} [ (T_s f~)^2 ](x) ds,
    evaluated by nested Gauss quadrature in space and adaptive quadrature
    in s; independent of the eigenbasis marching code path.
    """
    if params.d != 1:
        raise UnsupportedError("second_moment_quadrature is implemented for d = 1 only")
    ft = f.centered(params)
    ft2 = ft.product(ft)
    lp = params.lambda_p
    term1 = math.exp(lp * t) * ou.ou_semigroup_apply(ft2, t, [x], params, order=order)
    if t == 0.0:
        return term1

    nodes, weights = ou.gauss_nodes(params, order)

    def integrand(s: float) -> float:
        dec_out = math.exp(-params.mu * (t - s))
        spr_out = math.sqrt(max(1.0 - dec_out * dec_out, 0.0))
        dec_in = math.exp(-params.mu * s)
        spr_in = math.sqrt(max(1.0 - dec_in * dec_in, 0.0))
        outer = x * dec_out + spr_out * nodes                     # (q,)
        pts = outer[:, None] * dec_in + spr_in * nodes[None, :]   # (q, q)
        vals = ft(pts.reshape(-1, 1)).reshape(len(nodes), len(nodes))
        ts_ft = vals @ weights                                    # T_s f~ at outer
        return math.exp(lp * (t + s)) * float(weights @ (ts_ft * ts_ft))

    integral, _ = quad(integrand, 0.0, t, limit=300, epsabs=1e-12, epsrel=1e-10)
    return term1 + 2.0 * params.lam * params.p * integral
