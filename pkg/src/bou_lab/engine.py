"""Exact simulation of the branching OU particle system.

Every particle carries an independent Exp(lam) clock from birth; when the
clock fires the particle is replaced, at its current location, by two
offspring (probability p) or by none (probability 1 - p). Between clock
events positions advance by exact OU transitions, so no time-stepping
error exists anywhere.

The engine processes the genealogy generation by generation (a particle's
children belong to the next generation), with all draws batched per
generation in a fixed, documented order:

    1. lifetimes               Exp(lam), one per particle,
    2. per snapshot time, ascending: one Gaussian block advancing the
       particles alive at that time from their last materialized time,
    3. one Gaussian block advancing dying particles to their event time,
    4. one uniform block deciding branch (< p) versus death.

This is the per-particle-clock form of the usual event scheduling; the law
of the process is the standard one, and runs are bit-reproducible given
(seed, replica_id, config). Snapshots record the population after
advancing to the snapshot time and before any event scheduled exactly
there (ties break in favor of the snapshot).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError, ResourceLimitError
from .params import ModelParams, Regime, as_position
from .spectral import SpectralFunction

DEFAULT_MAX_PARTICLES = 2_000_000


@dataclass(frozen=True)
class Limits:
    """Resource caps for one replica.

    ``max_particles`` bounds the population observed at any snapshot time;
    ``max_total`` bounds particles ever created (guarding the windows
    between snapshots), defaulting to ten times the population cap.
    """

    max_particles: int = DEFAULT_MAX_PARTICLES
    max_total: int | None = None

    @property
    def total_cap(self) -> int:
        return self.max_total if self.max_total is not None else 10 * self.max_particles


@dataclass
class Snapshot:
    """Population state at a fixed time.

    ``positions`` is retained only when the simulation is asked to keep
    them; count, v_value and h_value are always present and recomputable
    from time and positions.
    """

    time: float
    count: int
    v_value: float
    h_value: np.ndarray
    positions: np.ndarray | None = None
    max_radius: float = 0.0

    @staticmethod
    def v_of(count: int, time: float, params: ModelParams) -> float:
        return math.exp(-params.lambda_p * time) * count

    @staticmethod
    def h_of(position_sum: np.ndarray, time: float, params: ModelParams) -> np.ndarray:
        return math.exp((-params.lambda_p + params.mu) * time) * np.asarray(position_sum)


@dataclass
class ReplicaSample:
    """Per-replica observables at each snapshot time."""

    replica_id: int
    snapshots: list
    functionals: np.ndarray          # shape (n_snapshots, n_functions)
    survived: bool
    events: np.ndarray | None = None  # trace mode: rows (time, +1/-1)


def _check_snapshot_times(snapshot_times) -> np.ndarray:
    ts = np.asarray(snapshot_times, dtype=np.float64)
    if ts.ndim != 1 or ts.size == 0:
        raise ParameterError("snapshot_times must be a nonempty 1-d sequence")
    if not np.all(np.isfinite(ts)) or np.any(ts < 0):
        raise ParameterError("snapshot times must be finite and nonnegative")
    if np.any(np.diff(ts) <= 0):
        raise ParameterError("snapshot times must be strictly increasing")
    return ts


class _Accumulator:
    """Streaming per-snapshot aggregates for one particle system."""

    def __init__(self, n_snapshots: int, d: int, functions, keep_positions: bool):
        self.counts = np.zeros(n_snapshots, dtype=np.int64)
        self.psums = np.zeros((n_snapshots, d))
        self.fsums = np.zeros((n_snapshots, len(functions)))
        self.maxr = np.zeros(n_snapshots)
        self.functions = functions
        self.positions = [[] for _ in range(n_snapshots)] if keep_positions else None

    def add(self, k: int, pos: np.ndarray):
        if pos.shape[0] == 0:
            return
        self.counts[k] += pos.shape[0]
        self.psums[k] += pos.sum(axis=0)
        for j, f in enumerate(self.functions):
            self.fsums[k, j] += float(np.sum(f(pos)))
        radius = float(np.max(np.sqrt(np.einsum("ij,ij->i", pos, pos))))
        if radius > self.maxr[k]:
            self.maxr[k] = radius
        if self.positions is not None:
            self.positions[k].append(pos.copy())

    def build(self, replica_id: int, ts: np.ndarray, params: ModelParams,
              events: np.ndarray | None) -> ReplicaSample:
        snaps = []
        for k, t in enumerate(ts):
            pos = None
            if self.positions is not None:
                pos = (np.concatenate(self.positions[k], axis=0)
                       if self.positions[k] else np.empty((0, params.d)))
            snaps.append(Snapshot(
                time=float(t),
                count=int(self.counts[k]),
                v_value=Snapshot.v_of(int(self.counts[k]), float(t), params),
                h_value=Snapshot.h_of(self.psums[k], float(t), params),
                positions=pos,
                max_radius=float(self.maxr[k]),
            ))
        return ReplicaSample(
            replica_id=replica_id,
            snapshots=snaps,
            functionals=self.fsums.copy(),
            survived=bool(self.counts[-1] > 0),
            events=events,
        )


def _run(params: ModelParams, roots, snapshot_times, rng, limits, functions,
         keep_positions, trace, replica_id):
    """Core generation loop. ``roots`` is a list of initial positions, one
    array per coupled system; all systems share the tree and innovations."""
    ts = _check_snapshot_times(snapshot_times)
    if limits.max_particles < 1:
        raise ParameterError("limits.max_particles must be >= 1")
    d = params.d
    n_sys = len(roots)
    acc = [_Accumulator(ts.size, d, functions, keep_positions) for _ in range(n_sys)]
    t_end = float(ts[-1])
    lam = params.lam
    eq_var = params.equilibrium_variance

    born = np.zeros(1)
    positions = [np.asarray(r, dtype=np.float64).reshape(1, d).copy() for r in roots]
    total_created = 1
    events = [] if trace else None

    while born.size:
        n = born.size
        life = rng.standard_exponential(n) / lam
        death = born + life
        cursor = born.copy()

        for k, tk in enumerate(ts):
            mask = (born <= tk) & (death >= tk)
            if tk > 0.0:
                mask &= born < tk  # offspring born exactly at tk appear after it
            m = int(mask.sum())
            if m == 0:
                continue
            decay = np.exp(-params.mu * (tk - cursor[mask]))[:, None]
            std = np.sqrt(eq_var * np.maximum(1.0 - decay * decay, 0.0))
            z = std * rng.standard_normal((m, d))
            for s in range(n_sys):
                moved = positions[s][mask] * decay + z
                positions[s][mask] = moved
                acc[s].add(k, moved)
            cursor[mask] = tk
            if int(acc[0].counts[k]) > limits.max_particles:
                raise ResourceLimitError(
                    f"population {int(acc[0].counts[k])} exceeds cap "
                    f"{limits.max_particles} at time {tk}",
                    time_reached=float(tk), replica_id=replica_id,
                )

        dying = death <= t_end
        m = int(dying.sum())
        if m == 0:
            break
        decay = np.exp(-params.mu * (death[dying] - cursor[dying]))[:, None]
        std = np.sqrt(eq_var * np.maximum(1.0 - decay * decay, 0.0))
        z = std * rng.standard_normal((m, d))
        branch_pos = [positions[s][dying] * decay + z for s in range(n_sys)]
        branches = rng.random(m) < params.p
        if trace:
            events.append(np.stack([death[dying], np.where(branches, 1.0, -1.0)], axis=1))

        nb = int(branches.sum())
        total_created += 2 * nb
        if total_created > limits.total_cap:
            raise ResourceLimitError(
                f"total particles created {total_created} exceeds guard "
                f"{limits.total_cap} (window starting {float(born.min()):.6g})",
                time_reached=float(death[dying].min()), replica_id=replica_id,
            )
        born = np.repeat(death[dying][branches], 2)
        positions = [np.repeat(bp[branches], 2, axis=0) for bp in branch_pos]

    ev = None
    if trace:
        ev = (np.concatenate(events, axis=0) if events else np.empty((0, 2)))
        ev = ev[np.argsort(ev[:, 0], kind="stable")]
    return [a.build(replica_id, ts, params, ev) for a in acc]


def simulate(params: ModelParams, x0, snapshot_times, rng,
             limits: Limits = Limits(), functions=(),
             keep_positions: bool = True, trace: bool = False,
             replica_id: int = 0) -> ReplicaSample:
    """Exact event-driven simulation from a single particle at x0.

    Snapshots are recorded at the requested times; ``functions`` is an
    optional panel of vectorized test functions whose population sums
    <X_t, f> are accumulated streaming (kept even when positions are not).
    Raises ResourceLimitError when the population cap is exceeded; results
    are never silently truncated.
    """
    root = as_position(x0, params)
    return _run(params, [root], snapshot_times, rng, limits, list(functions),
                keep_positions, trace, replica_id)[0]


def simulate_coupled(params: ModelParams, x0, snapshot_times, rng,
                     limits: Limits = Limits(), functions=(),
                     keep_positions: bool = False, replica_id: int = 0):
    """Two systems sharing one branching tree and one set of innovations.

    Returns (sample started at x0, sample started at 0). Corresponding
    particles differ by x0 e^{-mu t} exactly (up to rounding), hence the
    position-sum martingales satisfy H~_t - H_t = x0 e^{-lambda_p t} |X_t|.
    """
    root = as_position(x0, params)
    zero = np.zeros(params.d)
    out = _run(params, [root, zero], snapshot_times, rng, limits, list(functions),
               keep_positions, False, replica_id)
    return out[0], out[1]


def population_functional(snapshot: Snapshot, f) -> float:
    """<X_t, f>: exact sum of f over particles, 0 for an empty population."""
    if snapshot.count == 0:
        return 0.0
    if snapshot.positions is None:
        raise ParameterError("snapshot does not retain positions; "
                             "pass the function to simulate(...) instead")
    return float(np.sum(f(snapshot.positions)))


@dataclass(frozen=True)
class FluctuationTriple:
    """Components of the regime-appropriate CLT triple.

    Entries are NaN when the sample is undefined (empty population under a
    count-based norming); such samples are excluded from conditioned
    statistics.
    """

    spatial: float
    mass: float
    v: float


def fluctuation_from_stats(count: int, time: float, functional_value: float,
                           f_phi_mean: float, params: ModelParams,
                           v_inf_estimate: float) -> FluctuationTriple:
    """Triple from aggregate statistics (count, <X_t, f>).

    spatial = (<X_t, f> - |X_t| <f, phi>) / F_t with F_t = sqrt(|X_t|)
    (small), sqrt(t) sqrt(|X_t|) (critical) or e^{(lambda_p - mu) t}
    (large); mass = (|X_t| - e^{lambda_p t} V) / sqrt(|X_t|) with V the
    supplied terminal proxy for V_infinity; v = e^{-lambda_p t} |X_t|.
    """
    regime = params.regime
    lam_p = params.lambda_p
    v = Snapshot.v_of(count, time, params)
    centered = functional_value - count * f_phi_mean
    if regime is Regime.LARGE:
        spatial = centered * math.exp(-(lam_p - params.mu) * time)
    elif count == 0:
        spatial = math.nan
    elif regime is Regime.CRITICAL:
        spatial = centered / (math.sqrt(time) * math.sqrt(count))
    else:
        spatial = centered / math.sqrt(count)
    if count == 0:
        mass = math.nan
    else:
        mass = (count - math.exp(lam_p * time) * v_inf_estimate) / math.sqrt(count)
    return FluctuationTriple(spatial=spatial, mass=mass, v=v)


def fluctuation(snapshot: Snapshot, f, params: ModelParams,
                v_inf_estimate: float) -> FluctuationTriple:
    """Triple computed from a snapshot retaining positions."""
    value = population_functional(snapshot, f)
    f_phi = f.mean_phi(params) if isinstance(f, SpectralFunction) else None
    if f_phi is None:
        from .ou import equilibrium_average

        f_phi = equilibrium_average(f, params)
    return fluctuation_from_stats(snapshot.count, snapshot.time, value, f_phi,
                                  params, v_inf_estimate)
