"""Ornstein-Uhlenbeck transition kernel, semigroup, equilibrium and coupling.

The process solves dX = -mu X dt + sigma dW per coordinate. Over a gap dt
the transition is exactly Gaussian:

    X(t + dt) | X(t) = x   ~   N(x e^{-mu dt}, v(dt)),
    v(dt) = sigma^2 (1 - e^{-2 mu dt}) / (2 mu),

and the invariant measure has per-coordinate variance sigma^2 / (2 mu).
Semigroup averages T_t f(x) = E f(x e^{-mu t} + ou(t) G), G equilibrium
distributed, are evaluated with Gauss-Hermite quadrature (tensorized for
d <= 3, Monte Carlo fallback above).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .errors import ParameterError, ToleranceError
from .params import ModelParams, as_position
from .rng import fixed_stream

DEFAULT_QUAD_ORDER = 64
MC_FALLBACK_DRAWS = 1_000_000


def transition_coefficients(params: ModelParams, dt: float) -> tuple[float, float]:
    """Return (decay, std) of the exact transition over a gap dt."""
    if not (isinstance(dt, (int, float)) and math.isfinite(dt)) or dt < 0:
        raise ParameterError(f"dt must be a finite nonnegative real, got {dt!r}")
    decay = math.exp(-params.mu * dt)
    var = params.equilibrium_variance * (1.0 - decay * decay)
    return decay, math.sqrt(var) if var > 0.0 else 0.0


def ou_transition_sample(x, dt: float, params: ModelParams, rng) -> np.ndarray:
    """Sample the OU process at time dt started from x.

    Coordinates are independent; dt = 0 returns x exactly (a zero-variance
    draw is still consumed from the stream, keeping draw counts independent
    of dt).
    """
    pos = as_position(x, params)
    decay, std = transition_coefficients(params, dt)
    return pos * decay + std * rng.standard_normal(params.d)


def ou_transition_sample_batch(positions: np.ndarray, dt, params: ModelParams, rng) -> np.ndarray:
    """Vectorized transition for an (n, d) array; dt may be scalar or (n,)."""
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0) or not np.all(np.isfinite(dt)):
        raise ParameterError("dt entries must be finite and nonnegative")
    decay = np.exp(-params.mu * dt)
    std = np.sqrt(params.equilibrium_variance * np.maximum(1.0 - decay * decay, 0.0))
    if decay.ndim == 1:
        decay = decay[:, None]
        std = std[:, None]
    return positions * decay + std * rng.standard_normal(positions.shape)


def coupled_pair_transition(x, y, dt: float, params: ModelParams, rng):
    """Advance two positions over dt with the same Gaussian innovation.

    The difference contracts deterministically: x' - y' = (x - y) e^{-mu dt}
    up to floating-point rounding; marginally each output is a correct OU
    transition.
    """
    xp = as_position(x, params)
    yp = as_position(y, params)
    decay, std = transition_coefficients(params, dt)
    z = std * rng.standard_normal(params.d)
    return xp * decay + z, yp * decay + z


def equilibrium_density(x, params: ModelParams) -> float:
    """Density of the invariant Gaussian measure at x."""
    pos = as_position(x, params)
    pref = (params.mu / (math.pi * params.sigma ** 2)) ** (params.d / 2.0)
    return pref * math.exp(-(params.mu / params.sigma ** 2) * float(pos @ pos))


def equilibrium_sample(params: ModelParams, rng, size: int | None = None) -> np.ndarray:
    """Draw from the invariant measure: i.i.d. N(0, sigma^2/(2 mu)) coordinates."""
    sd = math.sqrt(params.equilibrium_variance)
    if size is None:
        return sd * rng.standard_normal(params.d)
    return sd * rng.standard_normal((size, params.d))


@lru_cache(maxsize=32)
def _hermgauss(order: int):
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    return nodes, weights / math.sqrt(math.pi)


def gauss_nodes(params: ModelParams, order: int = DEFAULT_QUAD_ORDER):
    """Nodes and weights integrating g against the equilibrium measure in 1d.

    sum_i w_i g(x_i) equals the integral exactly for polynomials of degree
    <= 2*order - 1.
    """
    z, w = _hermgauss(order)
    return z * math.sqrt(2.0 * params.equilibrium_variance), w


def gauss_nodes_nd(params: ModelParams, order: int = DEFAULT_QUAD_ORDER):
    """Tensorized equilibrium quadrature for d <= 3: nodes (m, d), weights (m,)."""
    x1, w1 = gauss_nodes(params, order)
    d = params.d
    if d == 1:
        return x1[:, None], w1
    grids = np.meshgrid(*([x1] * d), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.ones(len(nodes))
    wg = np.meshgrid(*([w1] * d), indexing="ij")
    for g in wg:
        weights *= g.ravel()
    return nodes, weights


def equilibrium_average(f, params: ModelParams, order: int = DEFAULT_QUAD_ORDER,
                        rng_seed: int = 0x0E17) -> float:
    """<f, phi> by tensor quadrature (d <= 3) or Monte Carlo (d > 3)."""
    if params.d <= 3:
        nodes, weights = gauss_nodes_nd(params, order)
        return float(weights @ np.asarray(f(nodes), dtype=np.float64))
    draws = equilibrium_sample(params, fixed_stream(rng_seed), size=MC_FALLBACK_DRAWS)
    return float(np.mean(np.asarray(f(draws), dtype=np.float64)))


def ou_semigroup_apply(f, t: float, x, params: ModelParams,
                       order: int = DEFAULT_QUAD_ORDER, degree: int | None = None,
                       tol: float = 1e-10, rng_seed: int = 0x5E11) -> float:
    """Gauss-Hermite evaluation of T_t f(x).

    ``f`` maps an (n, d) array to (n,) values; SpectralFunction instances
    work directly and carry their own polynomial degree. A ``degree`` hint
    marks a plain callable as polynomial, in which case quadrature of
    sufficient order is exact and no tolerance check is needed. For other
    callables the result is compared against a higher order rule and a
    ToleranceError (carrying the achieved estimate) is raised when the two
    disagree beyond ``tol``.
    """
    pos = as_position(x, params)
    if not (isinstance(t, (int, float)) and math.isfinite(t)) or t < 0:
        raise ParameterError(f"t must be a finite nonnegative real, got {t!r}")
    if degree is None:
        degree = getattr(f, "degree", None)
    if t == 0.0:
        return float(np.asarray(f(pos[None, :]))[0])

    decay = math.exp(-params.mu * t)
    spread = math.sqrt(max(1.0 - decay * decay, 0.0))

    def _evaluate(q: int) -> float:
        if params.d <= 3:
            nodes, weights = gauss_nodes_nd(params, q)
            pts = pos[None, :] * decay + spread * nodes
            return float(weights @ np.asarray(f(pts), dtype=np.float64))
        rng = fixed_stream(rng_seed)
        draws = equilibrium_sample(params, rng, size=MC_FALLBACK_DRAWS)
        pts = pos[None, :] * decay + spread * draws
        return float(np.mean(np.asarray(f(pts), dtype=np.float64)))

    if degree is not None:
        q = order if 2 * order - 1 >= int(degree) else int(degree) // 2 + 1
        return _evaluate(q)
    if params.d > 3:
        return _evaluate(order)
    value = _evaluate(order)
    check = _evaluate(order + 16)
    if abs(value - check) > tol * max(1.0, abs(check)):
        raise ToleranceError(
            f"quadrature order {order} insufficient: |delta| = {abs(value - check):.3e} "
            f"exceeds tol = {tol:.1e}",
            estimate=check,
            error_estimate=abs(value - check),
        )
    return check


def semigroup_function(f, t: float, params: ModelParams,
                       order: int = DEFAULT_QUAD_ORDER, degree: int | None = None):
    """Return T_t f as a vectorized callable, preserving the degree hint.

    T_t maps polynomials to polynomials of the same degree, so nesting
    semigroup_function keeps nested quadrature exact.
    """
    if degree is None:
        degree = getattr(f, "degree", None)

    def tf(points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.array([
            ou_semigroup_apply(f, t, pt, params, order=order, degree=degree)
            for pt in points
        ])

    tf.degree = degree
    return tf
