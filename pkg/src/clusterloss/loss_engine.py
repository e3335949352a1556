"""Exact loss distributions of the pool default-counting process.

Two model kinds share one piecewise-linear cumulated-intensity schedule:

* ``gpl``  — independent Poisson jump modes, total count capped at the pool
  size. Distributions come from Panjer's compound-Poisson recursion with the
  residual tail lumped into the cap state.
* ``gpcl`` — cluster-adjusted dynamics where a cluster of names can fire only
  while all its names survive. The counting process is then a Markov chain on
  {0..M}; distributions solve the forward Kolmogorov equation via matrix
  exponentials of the integrated transition-rate matrix.

Schedules store, for each jump amplitude, the *aggregate* cumulated jump
intensity: for ``gpl`` the mode's Poisson cumulated intensity, for ``gpcl``
the per-cluster cumulated intensity times the number of same-size clusters of
the undefaulted pool, C(M, amplitude). Values are knotted at quoted
maturities, linear in between, with constant-slope extrapolation beyond the
last knot.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg

log = logging.getLogger(__name__)

GPL = "gpl"
GPCL = "gpcl"
MODEL_KINDS = (GPL, GPCL)

STRATEGY_REPEATED = "repeated"
STRATEGY_CAPPED = "s0"
STRATEGY_SINGLE_NAME = "s1"
STRATEGY_CLUSTER = "s2"
STRATEGIES = (STRATEGY_REPEATED, STRATEGY_CAPPED, STRATEGY_SINGLE_NAME, STRATEGY_CLUSTER)

_NEGATIVE_CLAMP_TOL = 1e-12
_COLUMN_SUM_TOL = 1e-9


class LossEngineError(ValueError):
    """Raised for invalid schedules, pools or evaluation requests."""


@dataclass(frozen=True)
class PoolSpec:
    """Homogeneous pool: ``names`` credits of notional 1/names each,
    constant recovery on default."""

    names: int = 125
    recovery: float = 0.40

    def __post_init__(self):
        if self.names < 1:
            raise LossEngineError("pool must contain at least one name")
        if not 0.0 <= self.recovery <= 1.0:
            raise LossEngineError("recovery must lie in [0, 1]")

    @property
    def loss_per_default(self) -> float:
        return (1.0 - self.recovery) / self.names


def log_binomial(n: int, k: int) -> float:
    """log C(n, k); -inf outside 0 <= k <= n."""
    if k < 0 or k > n:
        return -math.inf
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


@lru_cache(maxsize=None)
def _binomial_ratio_column(names: int, amplitude: int) -> np.ndarray:
    """C(names - y, amplitude) / C(names, amplitude) for y = 0..names.

    Computed in log space: C(125, 62) ~ 1e36 overflows nothing here because
    only the ratio is ever exponentiated.
    """
    denom = log_binomial(names, amplitude)
    out = np.zeros(names + 1)
    for y in range(names + 1):
        num = log_binomial(names - y, amplitude)
        out[y] = 0.0 if num == -math.inf else math.exp(num - denom)
    return out


@dataclass(frozen=True)
class IntensitySchedule:
    """Piecewise-linear cumulated jump intensities per amplitude.

    ``cumulated[j][k]`` is the aggregate cumulated intensity of amplitude
    ``amplitudes[j]`` at ``knots[k]`` (zero at time zero, linear between
    knots, constant slope after the last knot).
    """

    model: str
    amplitudes: tuple[int, ...]
    knots: tuple[float, ...]
    cumulated: tuple[tuple[float, ...], ...]
    _knot_grid: np.ndarray = field(init=False, repr=False, compare=False)
    _value_grid: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.model not in MODEL_KINDS:
            raise LossEngineError(f"unknown model kind {self.model!r}")
        amps = self.amplitudes
        if len(amps) == 0:
            raise LossEngineError("schedule needs at least one amplitude")
        if any(int(a) != a or a < 1 for a in amps):
            raise LossEngineError("amplitudes must be integers >= 1")
        if any(b <= a for a, b in zip(amps, amps[1:])):
            raise LossEngineError("amplitudes must be strictly increasing")
        if len(self.knots) == 0 or self.knots[0] <= 0.0:
            raise LossEngineError("knots must be positive year fractions")
        if any(b <= a for a, b in zip(self.knots, self.knots[1:])):
            raise LossEngineError("knots must be strictly increasing")
        if len(self.cumulated) != len(amps):
            raise LossEngineError("one cumulated row per amplitude required")
        for row in self.cumulated:
            if len(row) != len(self.knots):
                raise LossEngineError("one cumulated value per knot required")
            if row[0] < 0 or any(b < a - 1e-15 for a, b in zip(row, row[1:])):
                raise LossEngineError(
                    "cumulated intensities must be non-negative and non-decreasing")
        grid = np.concatenate([[0.0], np.asarray(self.knots, dtype=float)])
        values = np.column_stack([np.zeros(len(amps)),
                                  np.asarray(self.cumulated, dtype=float)])
        object.__setattr__(self, "_knot_grid", grid)
        object.__setattr__(self, "_value_grid", values)

    @property
    def n_modes(self) -> int:
        return len(self.amplitudes)

    @property
    def horizon(self) -> float:
        return self.knots[-1]

    def aggregate_cumulated(self, t: float) -> np.ndarray:
        """Aggregate cumulated intensity of every amplitude at time t."""
        if t < 0:
            raise LossEngineError("time must be non-negative")
        grid = self._knot_grid
        values = self._value_grid
        if t <= grid[-1]:
            k = np.searchsorted(grid, t, side="right") - 1
            if grid[k] == t:
                return values[:, k].copy()
            w = (t - grid[k]) / (grid[k + 1] - grid[k])
            return values[:, k] + w * (values[:, k + 1] - values[:, k])
        # constant-slope extrapolation using the final interval
        slope = (values[:, -1] - values[:, -2]) / (grid[-1] - grid[-2])
        return values[:, -1] + slope * (t - grid[-1])

    def total_cumulated(self, amplitude: int) -> float:
        """Aggregate cumulated intensity of one amplitude at the last knot."""
        j = self.amplitudes.index(amplitude)
        return self.cumulated[j][-1]

    def with_cumulated(self, cumulated) -> "IntensitySchedule":
        rows = tuple(tuple(float(v) for v in row) for row in cumulated)
        return replace(self, cumulated=rows)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "amplitudes": list(self.amplitudes),
            "knots_years": list(self.knots),
            "cumulated": [list(row) for row in self.cumulated],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc: dict) -> "IntensitySchedule":
        try:
            return cls(
                model=doc["model"],
                amplitudes=tuple(int(a) for a in doc["amplitudes"]),
                knots=tuple(float(t) for t in doc["knots_years"]),
                cumulated=tuple(tuple(float(v) for v in row) for row in doc["cumulated"]),
            )
        except KeyError as exc:
            raise LossEngineError(f"schedule document missing key {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "IntensitySchedule":
        return cls.from_dict(json.loads(text))


def cluster_cumulated_intensity(schedule: IntensitySchedule, pool: PoolSpec,
                                amplitude: int, t: float) -> float:
    """Per-cluster cumulated intensity of one amplitude at time t.

    Schedules store the aggregate value — the per-cluster intensity times the
    number of size-``amplitude`` clusters of the whole pool — so this divides
    by C(names, amplitude) (in log space, the binomial is astronomically
    large mid-range).
    """
    if schedule.model != GPCL:
        raise LossEngineError("per-cluster intensities are defined for gpcl schedules")
    if amplitude not in schedule.amplitudes:
        raise LossEngineError(f"unknown amplitude {amplitude}")
    j = schedule.amplitudes.index(amplitude)
    aggregate = float(schedule.aggregate_cumulated(t)[j])
    return aggregate * math.exp(-log_binomial(pool.names, amplitude))


@dataclass(frozen=True)
class LossDistribution:
    """Distribution of the default count over {0..names} at one time."""

    time: float
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1:
            raise LossEngineError("probability vector must be one-dimensional")
        if probs.min() < -_NEGATIVE_CLAMP_TOL:
            raise LossEngineError(
                f"negative probability {probs.min():.3e} beyond clamp tolerance")
        if abs(probs.sum() - 1.0) > 1e-10:
            raise LossEngineError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs = np.clip(probs, 0.0, None)
        probs = probs / probs.sum()
        object.__setattr__(self, "probs", probs)

    @property
    def max_count(self) -> int:
        return len(self.probs) - 1

    def expected_count(self) -> float:
        return float(np.arange(len(self.probs)) @ self.probs)

    def survival_function(self) -> np.ndarray:
        """P(count >= k) for k = 0..max_count."""
        return np.concatenate([[1.0], 1.0 - np.cumsum(self.probs)[:-1]])


# ---------------------------------------------------------------------------
# gpcl: forward Kolmogorov equation
# ---------------------------------------------------------------------------

def cumulated_generator(pool: PoolSpec, schedule: IntensitySchedule,
                        t0: float, t1: float) -> np.ndarray:
    """Integral over [t0, t1] of the transition-rate matrix of the
    cluster-adjusted counting chain.

    Entry (x, y) for x > y with x - y in the amplitude set is
    C(names - y, x - y) times the per-cluster cumulated-intensity increment;
    the diagonal balances each column to zero; nothing below the diagonal
    (defaults cannot be undone). Indexing is (to-state, from-state).
    """
    if schedule.model != GPCL:
        raise LossEngineError("cumulated generator is defined for gpcl schedules")
    if not (0.0 <= t0 < t1):
        raise LossEngineError(f"invalid interval [{t0}, {t1}], need 0 <= t0 < t1")
    m = pool.names
    increments = schedule.aggregate_cumulated(t1) - schedule.aggregate_cumulated(t0)
    gen = np.zeros((m + 1, m + 1))
    diag = np.zeros(m + 1)
    for amplitude, dv in zip(schedule.amplitudes, increments):
        if dv <= 0.0 or amplitude > m:
            continue
        ratio = _binomial_ratio_column(m, amplitude)  # zero where amplitude > m - y
        weights = dv * ratio[: m + 1 - amplitude]
        rows = np.arange(amplitude, m + 1)
        gen[rows, rows - amplitude] += weights
        diag[: m + 1 - amplitude] -= weights
    gen[np.diag_indices(m + 1)] += diag
    return gen


def matrix_exponential(generator: np.ndarray) -> np.ndarray:
    """exp of a cumulated generator via Padé scaling-and-squaring.

    Verifies the probability-conservation contract on the way out: columns
    sum to one within 1e-9 and any negative entries (roundoff) are clamped,
    with the clamp magnitude logged.
    """
    gen = np.asarray(generator, dtype=float)
    if gen.ndim != 2 or gen.shape[0] != gen.shape[1]:
        raise LossEngineError("generator must be a square matrix")
    if not np.all(np.isfinite(gen)):
        raise LossEngineError("generator has non-finite entries")
    result = scipy.linalg.expm(gen)
    most_negative = float(result.min())
    if most_negative < 0.0:
        if most_negative < -_NEGATIVE_CLAMP_TOL:
            log.warning("matrix exponential clamped entries as low as %.3e", most_negative)
        else:
            log.debug("matrix exponential clamped entries as low as %.3e", most_negative)
        result = np.clip(result, 0.0, None)
    column_sums = result.sum(axis=0)
    if np.max(np.abs(column_sums - 1.0)) > _COLUMN_SUM_TOL:
        raise LossEngineError(
            f"matrix exponential lost probability mass: worst column sum "
            f"{column_sums[np.argmax(np.abs(column_sums - 1.0))]!r}")
    return result


def _knot_pieces(schedule: IntensitySchedule, t: float) -> list[tuple[float, float]]:
    """[0, t] split at schedule knots (intensities are constant inside each piece)."""
    cuts = [k for k in schedule.knots if k < t]
    edges = [0.0] + cuts + [t]
    return list(zip(edges[:-1], edges[1:]))


def gpcl_distribution(pool: PoolSpec, schedule: IntensitySchedule, t: float) -> LossDistribution:
    """Counting distribution of the cluster-adjusted model at time t.

    Ordered product of one matrix exponential per knot-to-knot piece of
    [0, t]; generators of different pieces need not commute, so the product
    runs oldest-first. With a single piece this is the plain one-exponential
    solution of the forward equation.
    """
    if t < 0:
        raise LossEngineError("time must be non-negative")
    state = np.zeros(pool.names + 1)
    state[0] = 1.0
    if t > 0:
        for a, b in _knot_pieces(schedule, t):
            gen = cumulated_generator(pool, schedule, a, b)
            state = matrix_exponential(gen) @ state
    return LossDistribution(time=t, probs=state)


def _taylor_terms(norm: float) -> int:
    """Smallest K with Taylor remainder norm^(K+1)/(K+1)! e^norm below 1e-16."""
    envelope = math.exp(norm)
    term, k = 1.0, 0
    while True:
        k += 1
        term *= norm / k
        if term * envelope < 1e-16:
            return k


def distribution_term_structure(pool: PoolSpec, schedule: IntensitySchedule,
                                times) -> np.ndarray:
    """Counting distributions at several times, stacked as rows.

    ``times`` must be non-negative and non-decreasing. The gpcl chain is
    propagated sequentially (splitting at knots); gpl rows come from the
    Panjer recursion vectorised across times.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise LossEngineError("times must be a one-dimensional sequence")
    if len(times) and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise LossEngineError("times must be non-negative and non-decreasing")
    if schedule.model == GPL:
        return _gpl_term_structure(pool, schedule, times)
    return _gpcl_term_structure(pool, schedule, times)


def _gpcl_term_structure(pool: PoolSpec, schedule: IntensitySchedule,
                         times: np.ndarray) -> np.ndarray:
    """Sequential chain propagation, one truncated power series per chunk.

    Within a knot interval the intensity density is constant, so with the
    interval's unit generator G the state at interval fraction s is
    exp(s G) v = sum_m s^m (G^m v / m!). The series vectors are built once
    per chunk (chunks keep the series norm at or below 2 so no precision is
    lost to cancellation) and every requested time inside the chunk is then
    a small polynomial evaluation. The final interval's slope also covers
    extrapolation beyond the last knot.
    """
    n_states = pool.names + 1
    out = np.empty((len(times), n_states))
    state = np.zeros(n_states)
    state[0] = 1.0
    if len(times) == 0:
        return out
    knot_grid = schedule._knot_grid
    n_intervals = len(knot_grid) - 1
    t_max = float(times[-1])

    # (start, end, interval index); the last interval absorbs extrapolation
    regions = []
    for k in range(n_intervals):
        a, b = float(knot_grid[k]), float(knot_grid[k + 1])
        if a >= t_max:
            break
        if k == n_intervals - 1 and t_max > b:
            b = t_max
        regions.append((a, min(b, t_max), k))

    ti = 0
    first_start = regions[0][0] if regions else math.inf
    while ti < len(times) and times[ti] <= first_start + 1e-15:
        out[ti] = state
        ti += 1

    def unit(k: int) -> tuple[np.ndarray, float, float]:
        a, b = float(knot_grid[k]), float(knot_grid[k + 1])
        gen = cumulated_generator(pool, schedule, a, b)
        return gen, float(np.abs(gen).sum(axis=0).max()), b - a

    for a, b, k in regions:
        gen, gen_norm, unit_len = unit(k)
        region_len = b - a
        if region_len <= 0:
            continue
        region_norm = gen_norm * region_len / unit_len
        if region_norm == 0.0:
            while ti < len(times) and times[ti] <= b + 1e-15:
                out[ti] = state
                ti += 1
            continue
        n_chunks = max(1, int(math.ceil(region_norm / 2.0)))
        chunk_len = region_len / n_chunks
        chunk_scale = chunk_len / unit_len  # multiplier taking G to one chunk
        n_terms = _taylor_terms(gen_norm * chunk_scale)
        for c in range(n_chunks):
            chunk_start = a + c * chunk_len
            chunk_end = a + (c + 1) * chunk_len if c < n_chunks - 1 else b
            series = np.empty((n_terms + 1, n_states))
            series[0] = state
            for m in range(1, n_terms + 1):
                series[m] = gen.dot(series[m - 1]) * (chunk_scale / m)
            lo = ti
            while ti < len(times) and times[ti] <= chunk_end + 1e-15:
                ti += 1
            if ti > lo:
                fractions = (times[lo:ti] - chunk_start) / chunk_len
                powers = np.power(fractions[:, None], np.arange(n_terms + 1)[None, :])
                out[lo:ti] = powers @ series
            state = series.sum(axis=0)
    while ti < len(times):  # times beyond the final region boundary roundoff
        out[ti] = state
        ti += 1
    # roundoff hygiene: clamp tiny negatives, renormalise
    np.clip(out, 0.0, None, out=out)
    out /= out.sum(axis=1, keepdims=True)
    return out


# ---------------------------------------------------------------------------
# gpl: Panjer recursion with cap
# ---------------------------------------------------------------------------

def compound_poisson_panjer(amplitudes, cumulated, n_states: int) -> np.ndarray:
    """P(Z = n) for n = 0..n_states-1 where Z sums independent Poisson modes
    ``Z = sum_j amplitude_j * N_j`` with ``N_j ~ Poisson(cumulated_j)``.

    This is the Panjer recursion for a compound Poisson sum with discrete
    severities: p(0) = exp(-Lambda), p(n) = (1/n) sum_j a_j L_j p(n - a_j).
    """
    amplitudes = [int(a) for a in amplitudes]
    cumulated = np.asarray(cumulated, dtype=float)
    if np.any(cumulated < 0):
        raise LossEngineError("cumulated intensities must be non-negative")
    probs = np.zeros(n_states)
    probs[0] = math.exp(-float(cumulated.sum()))
    weights = [(a, a * lam) for a, lam in zip(amplitudes, cumulated) if lam > 0]
    for n in range(1, n_states):
        acc = 0.0
        for a, w in weights:
            if a <= n:
                acc += w * probs[n - a]
        probs[n] = acc / n
    return probs


def gpl_distribution(pool: PoolSpec, schedule: IntensitySchedule, t: float) -> LossDistribution:
    """Counting distribution of the capped model at time t: exact Panjer
    probabilities on {0..names-1}, all remaining mass lumped at the cap."""
    if schedule.model != GPL:
        raise LossEngineError("gpl_distribution requires a gpl schedule")
    if t < 0:
        raise LossEngineError("time must be non-negative")
    lams = schedule.aggregate_cumulated(t)
    body = compound_poisson_panjer(schedule.amplitudes, lams, pool.names)
    probs = np.append(body, max(0.0, 1.0 - body.sum()))
    return LossDistribution(time=t, probs=probs)


def _gpl_term_structure(pool: PoolSpec, schedule: IntensitySchedule,
                        times: np.ndarray) -> np.ndarray:
    m = pool.names
    lams = np.stack([schedule.aggregate_cumulated(t) for t in times])  # (n_t, n_modes)
    out = np.zeros((len(times), m + 1))
    out[:, 0] = np.exp(-lams.sum(axis=1))
    amps = np.asarray(schedule.amplitudes)
    weights = amps[None, :] * lams  # (n_t, n_modes)
    for n in range(1, m):
        k = int(np.searchsorted(amps, n, side="right"))  # modes with amplitude <= n
        if k == 0:
            continue
        out[:, n] = np.einsum("tj,tj->t", out[:, n - amps[:k]], weights[:, :k]) / n
    out[:, m] = np.clip(1.0 - out[:, :m].sum(axis=1), 0.0, None)
    out /= out.sum(axis=1, keepdims=True)
    return out


# ---------------------------------------------------------------------------
# counting-process intensities of the four constructions
# ---------------------------------------------------------------------------

def counting_intensity(strategy: str, pool: PoolSpec, cluster_rates: dict[int, float],
                       count: int) -> float:
    """Intensity of the pool counting process given ``count`` defaults so far.

    ``cluster_rates`` maps amplitude -> per-cluster rate (size-homogeneous).
    The four constructions:

    * ``repeated``: sum_j j C(M, j) rate_j (state-independent),
    * ``s0``: sum_j min(j, M - count) C(M, j) rate_j (count capped at M),
    * ``s1``: (1 - count/M) sum_j j C(M, j) rate_j (names default once),
    * ``s2``: sum_j j C(M - count, j) rate_j (clusters of survivors only).
    """
    if strategy not in STRATEGIES:
        raise LossEngineError(f"unknown strategy {strategy!r}")
    m = pool.names
    if not 0 <= count <= m:
        raise LossEngineError(f"count must lie in [0, {m}]")
    total = 0.0
    for amplitude, rate in cluster_rates.items():
        amplitude = int(amplitude)
        if rate < 0:
            raise LossEngineError("cluster rates must be non-negative")
        if rate == 0.0 or amplitude < 1 or amplitude > m:
            continue
        log_rate = math.log(rate)
        if strategy == STRATEGY_REPEATED:
            total += amplitude * math.exp(log_binomial(m, amplitude) + log_rate)
        elif strategy == STRATEGY_CAPPED:
            room = max(m - count, 0)
            total += min(amplitude, room) * math.exp(log_binomial(m, amplitude) + log_rate)
        elif strategy == STRATEGY_SINGLE_NAME:
            total += (1.0 - count / m) * amplitude * math.exp(
                log_binomial(m, amplitude) + log_rate)
        else:  # s2
            lb = log_binomial(m - count, amplitude)
            if lb != -math.inf:
                total += amplitude * math.exp(lb + log_rate)
    return total
