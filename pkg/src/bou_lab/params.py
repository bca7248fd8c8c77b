"""Model parameters for the branching Ornstein-Uhlenbeck system.

A system is described by the dimension d, the OU coefficients (sigma, mu)
of the generator (1/2) sigma^2 Laplacian - mu x . grad, the branching rate
lam of the exponential clocks, and the offspring probability p (each event
replaces the particle by two with probability p, by none otherwise).

The Malthusian growth rate of the expected population is
lambda_p = (2p - 1) * lam, and the sign of lambda_p - 2 mu selects one of
three fluctuation regimes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import AmbiguousRegimeError, ParameterError

# Relative half-width of the band treated as exactly critical, and of the
# surrounding band considered too close to the boundary to auto-classify.
CRITICAL_REL_TOL = 1e-12
AMBIGUOUS_REL_TOL = 1e-9


class Regime(Enum):
    SMALL = "small"        # lambda_p < 2 mu
    CRITICAL = "critical"  # lambda_p = 2 mu
    LARGE = "large"        # lambda_p > 2 mu


@dataclass(frozen=True)
class ModelParams:
    """Physical and branching parameters, with derived rate and regime.

    ``pinned_regime`` overrides automatic classification for parameter sets
    inside the ambiguous band around lambda_p = 2 mu; elsewhere it must
    agree with the classification.
    """

    d: int = 1
    sigma: float = 1.0
    mu: float = 1.0
    lam: float = 1.0
    p: float = 0.75
    pinned_regime: Regime | None = None

    def __post_init__(self):
        if not isinstance(self.d, int) or self.d < 1:
            raise ParameterError(f"dimension d must be a positive integer, got {self.d!r}")
        for name in ("sigma", "mu", "lam"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ParameterError(f"{name} must be a positive finite real, got {v!r}")
        if not (0.5 < self.p <= 1.0):
            raise ParameterError(f"p must lie in (1/2, 1], got {self.p!r}")
        # Force the regime computation now so invalid pins fail at build time.
        self.regime  # noqa: B018

    @property
    def lambda_p(self) -> float:
        return (2.0 * self.p - 1.0) * self.lam

    @property
    def equilibrium_variance(self) -> float:
        """Per-coordinate variance sigma^2 / (2 mu) of the invariant measure."""
        return self.sigma ** 2 / (2.0 * self.mu)

    @property
    def hermite_scale(self) -> float:
        """Argument scaling sqrt(2 mu) / sigma mapping equilibrium to N(0,1)."""
        return math.sqrt(2.0 * self.mu) / self.sigma

    @property
    def regime(self) -> Regime:
        gap = self.lambda_p - 2.0 * self.mu
        scale = max(self.lambda_p, 2.0 * self.mu)
        rel = gap / scale
        if abs(rel) <= CRITICAL_REL_TOL:
            if self.pinned_regime is not None and self.pinned_regime is not Regime.CRITICAL:
                raise AmbiguousRegimeError(
                    f"lambda_p = {self.lambda_p} equals 2*mu = {2 * self.mu} within "
                    f"{CRITICAL_REL_TOL} relative; cannot pin regime {self.pinned_regime}"
                )
            return Regime.CRITICAL
        if abs(rel) < AMBIGUOUS_REL_TOL:
            if self.pinned_regime is None:
                raise AmbiguousRegimeError(
                    f"relative gap |lambda_p - 2*mu| / max = {abs(rel):.3e} lies between "
                    f"{CRITICAL_REL_TOL} and {AMBIGUOUS_REL_TOL}; pin the regime explicitly"
                )
            return self.pinned_regime
        computed = Regime.SMALL if rel < 0 else Regime.LARGE
        if self.pinned_regime is not None and self.pinned_regime is not computed:
            raise AmbiguousRegimeError(
                f"pinned regime {self.pinned_regime} contradicts parameters "
                f"(lambda_p = {self.lambda_p}, 2*mu = {2 * self.mu})"
            )
        return computed

    def require_regime(self, regime: Regime, what: str = "operation"):
        if self.regime is not regime:
            from .errors import RegimeError

            raise RegimeError(
                f"{what} requires the {regime.value} regime but parameters are "
                f"{self.regime.value} (lambda_p = {self.lambda_p}, 2*mu = {2 * self.mu})"
            )


def as_position(x, params: ModelParams) -> np.ndarray:
    """Validate and return a particle position as a float64 vector of length d."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape != (params.d,):
        raise ParameterError(f"position must have shape ({params.d},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"position entries must be finite, got {arr}")
    return arr
