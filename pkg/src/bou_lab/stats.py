"""Statistical engine: one- and two-sample Kolmogorov-Smirnov machinery,
estimator helpers and correlation diagnostics.

The Kolmogorov distribution K(x) = P(sup |B(t)| <= x) is evaluated by its
two classical series (theta-function form for small x, alternating form
otherwise); critical values come from inverting K by bisection. Verdicts
use the asymptotic critical value D_crit = K^{-1}(1 - alpha) / sqrt(n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SampleSizeError

MIN_KS_SAMPLES = 50


def kolmogorov_cdf(x: float) -> float:
    """P(sup_t |Brownian bridge| <= x)."""
    if x <= 0.0:
        return 0.0
    if x < 1.18:  # theta-function series converges fast for small x
        factor = math.sqrt(2.0 * math.pi) / x
        total = 0.0
        for k in range(1, 40, 2):  # odd k
            term = math.exp(-(k * math.pi) ** 2 / (8.0 * x * x))
            total += term
            if term < 1e-18 * max(total, 1.0):
                break
        return factor * total
    total = 0.0
    sign = 1.0
    for k in range(1, 200):
        term = sign * math.exp(-2.0 * (k * x) ** 2)
        total += term
        if abs(term) < 1e-18:
            break
        sign = -sign
    return max(0.0, min(1.0, 1.0 - 2.0 * total))


def kolmogorov_quantile(q: float) -> float:
    """Inverse of kolmogorov_cdf by bisection."""
    if not (0.0 < q < 1.0):
        raise ValueError(f"quantile level must be in (0, 1), got {q!r}")
    lo, hi = 1e-8, 8.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kolmogorov_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class KSResult:
    distance: float
    threshold_at_significance: float
    n: int
    significance: float

    @property
    def rejects(self) -> bool:
        return self.distance > self.threshold_at_significance


def ks_distance(samples, cdf) -> float:
    """One-sample Kolmogorov-Smirnov sup distance."""
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    n = xs.size
    f = np.asarray([cdf(x) for x in xs], dtype=np.float64)
    grid = np.arange(1, n + 1) / n
    return float(max(np.max(grid - f), np.max(f - (grid - 1.0 / n))))


def ks_statistic(samples, cdf, significance: float = 0.01) -> KSResult:
    """One-sample KS distance with the asymptotic critical value."""
    n = len(samples)
    if n < MIN_KS_SAMPLES:
        raise SampleSizeError(f"KS test requires >= {MIN_KS_SAMPLES} samples, got {n}")
    d = ks_distance(samples, cdf)
    threshold = kolmogorov_quantile(1.0 - significance) / math.sqrt(n)
    return KSResult(distance=d, threshold_at_significance=threshold,
                    n=n, significance=significance)


def ks_two_sample(a, b, significance: float = 0.01) -> KSResult:
    """Two-sample KS distance with the asymptotic critical value."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size < MIN_KS_SAMPLES or b.size < MIN_KS_SAMPLES:
        raise SampleSizeError(f"two-sample KS requires >= {MIN_KS_SAMPLES} per sample")
    merged = np.concatenate([a, b])
    fa = np.searchsorted(a, merged, side="right") / a.size
    fb = np.searchsorted(b, merged, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    n_eff = a.size * b.size / (a.size + b.size)
    threshold = kolmogorov_quantile(1.0 - significance) / math.sqrt(n_eff)
    return KSResult(distance=d, threshold_at_significance=threshold,
                    n=int(n_eff), significance=significance)


def normal_cdf(x: float, mean: float = 0.0, variance: float = 1.0) -> float:
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance!r}")
    return 0.5 * (1.0 + math.erf((x - mean) / math.sqrt(2.0 * variance)))


def mean_and_se(samples) -> tuple[float, float]:
    xs = np.asarray(samples, dtype=np.float64)
    if xs.size < 2:
        raise SampleSizeError("need at least two samples for a standard error")
    return float(xs.mean()), float(xs.std(ddof=1) / math.sqrt(xs.size))


def variance_and_se(samples) -> tuple[float, float]:
    """Sample variance with its delta-method standard error."""
    xs = np.asarray(samples, dtype=np.float64)
    if xs.size < 4:
        raise SampleSizeError("need at least four samples for a variance SE")
    n = xs.size
    var = float(xs.var(ddof=1))
    centered = xs - xs.mean()
    m4 = float(np.mean(centered ** 4))
    se = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
    return var, se


def correlation_matrix(columns) -> np.ndarray:
    """Pairwise sample correlations of equal-length sample vectors."""
    data = np.vstack([np.asarray(c, dtype=np.float64) for c in columns])
    return np.corrcoef(data)


def distance_correlation(x, y, max_n: int = 2000) -> float:
    """Distance correlation estimate (qualitative dependence diagnostic).

    Quadratic in sample size, so inputs are truncated to max_n points.
    """
    x = np.asarray(x, dtype=np.float64)[:max_n]
    y = np.asarray(y, dtype=np.float64)[:max_n]
    n = x.size
    if n < 10:
        raise SampleSizeError("distance correlation needs at least 10 samples")

    def centered(v):
        dist = np.abs(v[:, None] - v[None, :])
        return dist - dist.mean(axis=0)[None, :] - dist.mean(axis=1)[:, None] + dist.mean()

    ax, ay = centered(x), centered(y)
    dcov2 = (ax * ay).mean()
    dvarx = (ax * ax).mean()
    dvary = (ay * ay).mean()
    denom = math.sqrt(dvarx * dvary)
    return math.sqrt(max(dcov2, 0.0) / denom) if denom > 0 else 0.0
