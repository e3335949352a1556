"""Monte Carlo engine for common-shock cluster defaults with name identity.

Shock streams are sampled per amplitude as inhomogeneous Poisson processes by
inverse transform of the piecewise-linear aggregate cumulated intensity; each
event carries a uniformly random subset of names of that size (under
size-homogeneous intensities all same-size clusters are exchangeable, so the
merged-stream-plus-uniform-mark construction is distributionally exact).

Four ways of turning the same stream into a default count:

* ``repeated`` — every event adds its full size; the count is unbounded.
* ``s0``       — running total capped at the pool size.
* ``s1``       — names default at most once; an event defaults the not-yet-
                 defaulted names it contains.
* ``s2``       — an event fires only if *none* of its names has defaulted;
                 otherwise it is discarded entirely.

Per-path RNG streams are spawned from a splittable seed sequence keyed by the
path index, so runs are reproducible and paths independent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .loss_engine import (
    GPCL,
    GPL,
    STRATEGIES,
    STRATEGY_CAPPED,
    STRATEGY_CLUSTER,
    STRATEGY_REPEATED,
    STRATEGY_SINGLE_NAME,
    IntensitySchedule,
    LossDistribution,
    LossEngineError,
    PoolSpec,
)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ShockEvent:
    """One cluster shock: arrival time and the set of names it hits."""

    time: float
    cluster: tuple[int, ...]

    def __post_init__(self):
        if self.time <= 0:
            raise SimulationError("shock times must be positive")
        if len(self.cluster) < 1:
            raise SimulationError("clusters hold at least one name")


@dataclass
class Trajectory:
    """Counting path produced by applying one strategy to an event stream.

    ``increments[i]`` is the count increase accepted at event i (zero for a
    discarded event), ``counts[i]`` the running count just after it. For the
    name-aware strategies (s1, s2), ``name_default_times`` holds each name's
    default time (nan while alive); the other strategies do not preserve name
    identity.
    """

    strategy: str
    pool: PoolSpec
    times: np.ndarray
    increments: np.ndarray
    counts: np.ndarray
    name_default_times: np.ndarray | None

    def count_at(self, t: float) -> int:
        idx = np.searchsorted(self.times, t, side="right") - 1
        return 0 if idx < 0 else int(self.counts[idx])


def _rng_for_path(seed: int, path_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(path_index,)))


def _inverse_grid(schedule: IntensitySchedule, horizon: float):
    """Breakpoints (times, cumulated rows) covering [0, horizon] for inversion."""
    grid = [0.0] + [k for k in schedule.knots if k < horizon] + [horizon]
    times = np.asarray(grid)
    values = np.stack([schedule.aggregate_cumulated(t) for t in grid])  # (n_pts, n_modes)
    return times, values


def sample_shock_stream(pool: PoolSpec, schedule: IntensitySchedule, horizon: float,
                        seed: int | np.random.Generator = 0) -> list[ShockEvent]:
    """Sample one merged, time-sorted stream of cluster shocks up to ``horizon``.

    For each amplitude the event count is Poisson with mean equal to the
    aggregate cumulated intensity at the horizon, and event times are the
    inverse image of uniforms under the piecewise-linear cumulated curve
    (exact, no thinning). Ties after merging are broken by amplitude index.
    """
    if horizon <= 0:
        raise SimulationError("horizon must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    grid_times, grid_values = _inverse_grid(schedule, horizon)
    events: list[tuple[float, int, ShockEvent]] = []
    for j, amplitude in enumerate(schedule.amplitudes):
        total = float(grid_values[-1, j])
        if total <= 0.0:
            continue
        count = rng.poisson(total)
        if count == 0:
            continue
        u = rng.uniform(0.0, total, size=count)
        t = np.interp(u, grid_values[:, j], grid_times)
        for ti in np.sort(t):
            cluster = np.sort(rng.choice(pool.names, size=amplitude, replace=False))
            events.append((float(ti), j, ShockEvent(float(ti), tuple(int(c) for c in cluster))))
    events.sort(key=lambda e: (e[0], e[1]))
    return [e[2] for e in events]


def apply_strategy(events: list[ShockEvent], strategy: str, pool: PoolSpec) -> Trajectory:
    """Turn a time-sorted event stream into a counting trajectory."""
    if strategy not in STRATEGIES:
        raise SimulationError(f"unknown strategy {strategy!r}")
    times = np.array([e.time for e in events])
    if np.any(np.diff(times) < 0):
        raise SimulationError("events must be sorted by time")
    name_aware = strategy in (STRATEGY_SINGLE_NAME, STRATEGY_CLUSTER)
    defaulted = np.zeros(pool.names, dtype=bool) if name_aware else None
    name_times = np.full(pool.names, np.nan) if name_aware else None
    increments = np.zeros(len(events), dtype=np.int64)
    count = 0
    for i, event in enumerate(events):
        members = np.asarray(event.cluster, dtype=np.intp)
        if name_aware and members.max(initial=-1) >= pool.names:
            raise SimulationError("cluster references a name outside the pool")
        if strategy == STRATEGY_REPEATED:
            inc = len(members)
        elif strategy == STRATEGY_CAPPED:
            inc = min(len(members), pool.names - count)
        elif strategy == STRATEGY_SINGLE_NAME:
            fresh = members[~defaulted[members]]
            defaulted[fresh] = True
            name_times[fresh] = event.time
            inc = len(fresh)
        else:  # s2: all-or-nothing
            if defaulted[members].any():
                inc = 0
            else:
                defaulted[members] = True
                name_times[members] = event.time
                inc = len(members)
        count += inc
        increments[i] = inc
    return Trajectory(
        strategy=strategy,
        pool=pool,
        times=times,
        increments=increments,
        counts=np.cumsum(increments),
        name_default_times=name_times,
    )


def single_name_default_times(trajectory: Trajectory) -> np.ndarray:
    """Per-name default times (nan = never defaulted).

    Only the name-aware strategies preserve identity; the capped and repeated
    counts cannot be attributed to names.
    """
    if trajectory.name_default_times is None:
        raise SimulationError(
            f"strategy {trajectory.strategy!r} does not preserve name identity")
    return trajectory.name_default_times.copy()


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Histogram of path counts at one time with binomial standard errors.

    ``overflow`` marks the repeated strategy's top bin, which then holds all
    mass at or above the pool size (the repeated count is unbounded).
    """

    distribution: LossDistribution
    std_err: np.ndarray
    strategy: str
    n_paths: int
    seed: int
    overflow: bool


def empirical_distributions(pool: PoolSpec, schedule: IntensitySchedule, strategy: str,
                            times, n_paths: int, seed: int = 0) -> list[EmpiricalDistribution]:
    """Simulate once, histogram the counting process at each requested time.

    One pass over ``n_paths`` independent paths serves every time point; the
    per-bin standard error is the binomial estimate sqrt(p(1-p)/n).
    """
    if strategy not in STRATEGIES:
        raise SimulationError(f"unknown strategy {strategy!r}")
    if n_paths < 1:
        raise SimulationError("n_paths must be at least 1")
    times = np.asarray(sorted(float(t) for t in np.atleast_1d(times)))
    if len(times) == 0 or times[0] < 0:
        raise SimulationError("need at least one non-negative time")
    horizon = float(times[-1])
    m = pool.names
    histogram = np.zeros((len(times), m + 1), dtype=np.int64)
    if horizon == 0.0:
        histogram[:, 0] = n_paths
    else:
        grid_times, grid_values = _inverse_grid(schedule, horizon)
        totals = grid_values[-1]
        amplitudes = schedule.amplitudes
        name_aware = strategy in (STRATEGY_SINGLE_NAME, STRATEGY_CLUSTER)
        for p in range(n_paths):
            rng = _rng_for_path(seed, p)
            event_times: list[np.ndarray] = []
            event_amps: list[np.ndarray] = []
            for j, amplitude in enumerate(amplitudes):
                if totals[j] <= 0.0:
                    continue
                k = rng.poisson(totals[j])
                if k == 0:
                    continue
                u = rng.uniform(0.0, totals[j], size=k)
                event_times.append(np.interp(u, grid_values[:, j], grid_times))
                event_amps.append(np.full(k, j, dtype=np.intp))
            if not event_times:
                histogram[:, 0] += 1
                continue
            ts = np.concatenate(event_times)
            js = np.concatenate(event_amps)
            order = np.lexsort((js, ts))
            ts, js = ts[order], js[order]
            counts = np.empty(len(ts), dtype=np.int64)
            running = 0
            defaulted = np.zeros(m, dtype=bool) if name_aware else None
            for i in range(len(ts)):
                size = amplitudes[js[i]]
                if strategy == STRATEGY_REPEATED:
                    running += size
                elif strategy == STRATEGY_CAPPED:
                    running = min(running + size, m)
                else:
                    cluster = rng.choice(m, size=size, replace=False)
                    if strategy == STRATEGY_SINGLE_NAME:
                        fresh = cluster[~defaulted[cluster]]
                        defaulted[fresh] = True
                        running += len(fresh)
                    elif not defaulted[cluster].any():
                        defaulted[cluster] = True
                        running += size
                counts[i] = running
            at_times = np.searchsorted(ts, times, side="right") - 1
            path_counts = np.where(at_times >= 0, counts[np.clip(at_times, 0, None)], 0)
            for row, c in enumerate(path_counts):
                histogram[row, min(int(c), m)] += 1
    out = []
    for row, t in enumerate(times):
        freq = histogram[row] / n_paths
        std_err = np.sqrt(freq * (1.0 - freq) / n_paths)
        out.append(EmpiricalDistribution(
            distribution=LossDistribution(time=float(t), probs=freq),
            std_err=std_err,
            strategy=strategy,
            n_paths=n_paths,
            seed=seed,
            overflow=(strategy == STRATEGY_REPEATED),
        ))
    return out


def empirical_distribution(pool: PoolSpec, schedule: IntensitySchedule, strategy: str,
                           t: float, n_paths: int, seed: int = 0) -> EmpiricalDistribution:
    """Histogram of the counting process at a single time."""
    return empirical_distributions(pool, schedule, strategy, [t], n_paths, seed)[0]
