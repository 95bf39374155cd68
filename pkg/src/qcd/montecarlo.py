"""Reproducible Monte Carlo estimation of false-alarm and miss probabilities.

Observation noise comes from the counter-based streams in `qcd.rng`: the
variate at time t of trial i is a pure function of ``(master_seed, i, t)``.
Trials are grouped into fixed-size chunks (independent of the worker count),
simulated by nogil numba kernels, and reduced by counting, so every report is
bit-identical for any number of workers.

Because the noise is addressable, a single pre-change path per trial can be
branched at every change point of a grid; each branch sees exactly the
observations an independent run at that change point would see.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy import stats

from .bounds import latency_upper_bound
from .detector import ThresholdPolicy, TimeVaryingThreshold
from .dist import Bernoulli, DiscreteTable, DistributionPair, GaussianMeanShift
from .errors import UsageError
from .rng import derive_key, noise_block

__all__ = [
    "simulate_stopping_times",
    "simulate_stopping_times_grid",
    "clopper_pearson",
    "EstimationReport",
    "estimate_false_alarm",
    "estimate_miss",
    "LatencyEstimate",
    "empirical_latency",
    "default_nu_grid",
]

log = logging.getLogger(__name__)

CHUNK_TRIALS = 1024
DEFAULT_LEVEL = 0.99

_GAUSSIAN, _BERNOULLI, _TABLE = 0, 1, 2
_EMPTY = np.empty(0)


def _model(pair: DistributionPair):
    """Flatten a pair into the arrays the kernels understand."""
    if isinstance(pair, GaussianMeanShift):
        fp = np.array([pair.mu, pair.sigma, pair.sigma**2])
        return _GAUSSIAN, fp, _EMPTY, _EMPTY, _EMPTY
    if isinstance(pair, Bernoulli):
        return _BERNOULLI, np.array([pair.p0, pair.p1]), pair._llr_table, _EMPTY, _EMPTY
    if isinstance(pair, DiscreteTable):
        return _TABLE, _EMPTY, pair._llr_table, pair._cdf0, pair._cdf1
    raise UsageError(f"no simulation kernel for {type(pair).__name__}")


@nb.njit(inline="always")
def _llr(kind, fp, table, cdf0, cdf1, z, post):
    # same floating-point expressions as the pairs' observe() and llr()
    if kind == 0:
        x = fp[1] * z + fp[0] * (1.0 if post else 0.0)
        return fp[0] * (x - 0.5 * fp[0]) / fp[2]
    if kind == 1:
        p = fp[1] if post else fp[0]
        return table[1] if z < p else table[0]
    cdf = cdf1 if post else cdf0
    x = 0
    while x < cdf.size and cdf[x] <= z:
        x += 1
    return table[x]


@nb.njit(nogil=True, cache=True)
def _stop_times(kind, fp, table, cdf0, cdf1, k0, k1, trials, nu, thr, length, out):
    normal = kind == 0
    for i in range(trials.size):
        tr = trials[i]
        w = 0.0
        tau = length + 1
        blk = -1
        vals = (0.0, 0.0, 0.0, 0.0)
        for t in range(length):
            if (t >> 2) != blk:
                blk = t >> 2
                vals = noise_block(normal, k0, k1, tr, blk)
            w = max(w, 0.0) + _llr(kind, fp, table, cdf0, cdf1, vals[t & 3], t + 1 >= nu)
            if w >= thr[t]:
                tau = t + 1
                break
        out[i] = tau


@nb.njit(nogil=True, cache=True)
def _stop_times_grid(kind, fp, table, cdf0, cdf1, k0, k1, trials, nus, thr, T, out):
    normal = kind == 0
    last = nus[nus.size - 1]
    wpath = np.zeros(last)  # wpath[m] = W_m for m = 0..last-1
    for i in range(trials.size):
        tr = trials[i]
        # shared pre-change path, times 1..last-1
        w = 0.0
        tau0 = T + 1
        blk = -1
        vals = (0.0, 0.0, 0.0, 0.0)
        for t in range(last - 1):
            if (t >> 2) != blk:
                blk = t >> 2
                vals = noise_block(normal, k0, k1, tr, blk)
            w = max(w, 0.0) + _llr(kind, fp, table, cdf0, cdf1, vals[t & 3], False)
            wpath[t + 1] = w
            if w >= thr[t]:
                tau0 = t + 1
                break
        for g in range(nus.size):
            nu = nus[g]
            if tau0 < nu:
                out[g, i] = tau0
                continue
            w = wpath[nu - 1]
            tau = T + 1
            blk = -1
            for t in range(nu - 1, T):
                if (t >> 2) != blk:
                    blk = t >> 2
                    vals = noise_block(normal, k0, k1, tr, blk)
                w = max(w, 0.0) + _llr(kind, fp, table, cdf0, cdf1, vals[t & 3], True)
                if w >= thr[t]:
                    tau = t + 1
                    break
            out[g, i] = tau


def _chunks(n_trials: int) -> list[np.ndarray]:
    return [np.arange(s, min(s + CHUNK_TRIALS, n_trials), dtype=np.int64)
            for s in range(0, n_trials, CHUNK_TRIALS)]


def _map(job, chunks, workers: int) -> list:
    if workers < 1:
        raise UsageError(f"workers must be >= 1, got {workers}")
    if workers == 1:
        return [job(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, chunks))


def simulate_stopping_times(
    pair: DistributionPair,
    policy: ThresholdPolicy,
    length: int,
    nu,
    n_trials: int,
    master_seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Stopping times of ``n_trials`` detectors observed for ``length`` samples.

    Trial i uses stream ``(master_seed, i)``; ``nu`` may be ``math.inf``.  A
    value of ``length + 1`` means the detector had not stopped by ``length``.
    """
    if length < 1 or n_trials < 1:
        raise UsageError("length and n_trials must be positive")
    kind, fp, table, cdf0, cdf1 = _model(pair)
    k0, k1 = (np.uint64(k) for k in derive_key(master_seed))
    thr = np.ascontiguousarray(policy.thresholds(length), dtype=float)
    nu = float(nu)

    def job(trials):
        out = np.empty(trials.size, dtype=np.int64)
        _stop_times(kind, fp, table, cdf0, cdf1, k0, k1, trials, nu, thr, length, out)
        return out

    return np.concatenate(_map(job, _chunks(n_trials), workers))


def simulate_stopping_times_grid(
    pair: DistributionPair,
    policy: ThresholdPolicy,
    T: int,
    nus,
    n_trials: int,
    master_seed: int,
    workers: int = 1,
) -> np.ndarray:
    """Stopping times for every change point in ``nus`` (rows) and trial (columns).

    Row g equals ``simulate_stopping_times(pair, policy, T, nus[g], ...)``
    exactly; the pre-change part of each path is simulated once.
    """
    nus = np.asarray(sorted(set(int(v) for v in nus)), dtype=np.int64)
    if nus.size == 0 or nus[0] < 1 or nus[-1] > T:
        raise UsageError(f"change points must lie in 1..{T}")
    kind, fp, table, cdf0, cdf1 = _model(pair)
    k0, k1 = (np.uint64(k) for k in derive_key(master_seed))
    thr = np.ascontiguousarray(policy.thresholds(T), dtype=float)

    def job(trials):
        out = np.empty((nus.size, trials.size), dtype=np.int64)
        _stop_times_grid(kind, fp, table, cdf0, cdf1, k0, k1, trials, nus, thr, T, out)
        return out

    return np.concatenate(_map(job, _chunks(n_trials), workers), axis=1)


def clopper_pearson(k: int, n: int, level: float = DEFAULT_LEVEL) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval."""
    if not 0 < level < 1:
        raise UsageError(f"confidence level must lie in (0, 1), got {level}")
    alpha = 1.0 - level
    lo = 0.0 if k == 0 else float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


def _clopper_pearson_vec(k: np.ndarray, n: int, level: float) -> tuple[np.ndarray, np.ndarray]:
    alpha = 1.0 - level
    k = np.asarray(k, dtype=float)
    with np.errstate(invalid="ignore"):
        lo = np.where(k == 0, 0.0, stats.beta.ppf(alpha / 2, np.maximum(k, 1), n - k + 1))
        hi = np.where(k == n, 1.0, stats.beta.ppf(1 - alpha / 2, k + 1, np.maximum(n - k, 1)))
    return lo, hi


@dataclass(frozen=True)
class EstimationReport:
    trials: int
    successes: int
    point: float
    ci_low: float
    ci_high: float
    level: float
    master_seed: int
    instance: dict = field(default_factory=dict)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def _report(k: int, n: int, level: float, seed: int, instance: dict) -> EstimationReport:
    lo, hi = clopper_pearson(k, n, level)
    return EstimationReport(n, int(k), k / n, lo, hi, level, seed, instance)


def _instance(pair, policy, T, nu=math.inf, d=None) -> dict:
    return {"pair": pair.describe(), "policy": policy.describe(), "T": T, "nu": nu, "d": d}


def estimate_false_alarm(
    pair: DistributionPair,
    policy: ThresholdPolicy,
    T: int,
    n_trials: int,
    master_seed: int,
    level: float = DEFAULT_LEVEL,
    workers: int = 1,
) -> EstimationReport:
    """Estimate ``Pr_inf(tau <= T)``."""
    if n_trials < 100:
        raise UsageError(f"need at least 100 trials, got {n_trials}")
    tau = simulate_stopping_times(pair, policy, T, math.inf, n_trials, master_seed, workers)
    k = int(np.count_nonzero(tau <= T))
    return _report(k, n_trials, level, master_seed, _instance(pair, policy, T))


def estimate_miss(
    pair: DistributionPair,
    policy: ThresholdPolicy,
    T: int,
    nu: int,
    d: int,
    n_trials: int,
    master_seed: int,
    level: float = DEFAULT_LEVEL,
    workers: int = 1,
) -> EstimationReport:
    """Estimate ``Pr_nu(tau >= nu + d)`` (runs that never stop count as misses)."""
    if d < 1 or not 1 <= nu <= T - d:
        raise UsageError(f"need d >= 1 and 1 <= nu <= T - d (nu={nu}, d={d}, T={T})")
    if n_trials < 100:
        raise UsageError(f"need at least 100 trials, got {n_trials}")
    # only samples 1 .. nu+d-1 decide the event
    tau = simulate_stopping_times(pair, policy, nu + d - 1, nu, n_trials, master_seed, workers)
    k = int(np.count_nonzero(tau >= nu + d))
    return _report(k, n_trials, level, master_seed, _instance(pair, policy, T, nu, d))


@dataclass(frozen=True)
class LatencyEstimate:
    d_hat: int | None  # None: no d <= T-1 satisfies every grid constraint
    nu_grid: tuple[int, ...]
    survival: dict  # nu -> array, entry d-1 = estimated Pr_nu(tau >= nu + d), d = 1..T-nu
    reports: dict  # nu -> EstimationReport of the miss event at d_hat
    delta_d: float
    # smallest d passing every constraint with the CI lower (resp. upper) end in
    # place of the point estimate; brackets d_hat
    d_ci: tuple[int | None, int | None] = (None, None)

    @property
    def feasible(self) -> bool:
        return self.d_hat is not None


def default_nu_grid(
    T: int, policy: ThresholdPolicy, pair: DistributionPair | None = None, delta_d: float | None = None
) -> list[int]:
    """``{1, T/4, T/2, 3T/4, T - d_ref}`` clipped to 1..T-1.

    ``d_ref`` is the rounded-up latency upper bound when the policy is the
    time-varying threshold; otherwise the last point is T - 1.
    """
    pts = {1, T // 4, T // 2, (3 * T) // 4}
    d_ref = 1
    if isinstance(policy, TimeVaryingThreshold) and pair is not None and delta_d is not None and delta_d < 1:
        _, d_bar = latency_upper_bound(pair, T, policy.delta_f, delta_d, policy.r)
        d_ref = math.ceil(d_bar)
    pts.add(T - d_ref)
    return sorted(p for p in pts if 1 <= p <= T - 1)


def empirical_latency(
    pair: DistributionPair,
    policy: ThresholdPolicy,
    T: int,
    delta_d: float,
    n_trials: int,
    master_seed: int,
    nu_grid=None,
    level: float = DEFAULT_LEVEL,
    workers: int = 1,
) -> LatencyEstimate:
    """Smallest d whose estimated miss probability is <= delta_d at every grid nu <= T - d."""
    if T < 2:
        raise UsageError(f"latency needs T >= 2, got {T}")
    if not 0 < delta_d <= 1:
        raise UsageError(f"delta_d must lie in (0, 1], got {delta_d}")
    if n_trials < 1000:
        raise UsageError(f"need at least 1000 trials, got {n_trials}")
    grid = default_nu_grid(T, policy, pair, delta_d) if nu_grid is None else sorted(set(nu_grid))
    if not grid or grid[0] < 1 or grid[-1] > T - 1:
        raise UsageError(f"nu grid must be a nonempty subset of 1..{T - 1}")

    survival = {}
    taus = {}
    ok = np.ones(T - 1, dtype=bool)  # ok[d-1]: every constraint at d holds
    ok_lo = np.ones(T - 1, dtype=bool)
    ok_hi = np.ones(T - 1, dtype=bool)
    d_axis = np.arange(1, T)
    all_tau = simulate_stopping_times_grid(pair, policy, T, grid, n_trials, master_seed, workers)
    for nu, tau in zip(grid, all_tau):
        taus[nu] = tau
        # counts[t] = #{tau = t}, t = 0..T+1
        counts = np.bincount(tau, minlength=T + 2)
        at_least = n_trials - np.cumsum(counts)[nu : T]  # #{tau >= nu + d}, d = 1..T-nu
        surv = at_least / n_trials
        survival[nu] = surv
        # constraint applies only when nu <= T - d
        applies = d_axis <= T - nu
        ok[applies] &= surv <= delta_d
        lo, hi = _clopper_pearson_vec(at_least, n_trials, level)
        ok_lo[applies] &= lo <= delta_d
        ok_hi[applies] &= hi <= delta_d

    d_hat, d_lo, d_hi = (_first_true(m) for m in (ok, ok_lo, ok_hi))
    reports = {}
    if d_hat is not None:
        for nu in grid:
            if nu <= T - d_hat:
                k = int(np.count_nonzero(taus[nu] >= nu + d_hat))
                reports[nu] = _report(
                    k, n_trials, level, master_seed, _instance(pair, policy, T, nu, d_hat)
                )
        _monitor_worst_nu(reports)
    return LatencyEstimate(d_hat, tuple(grid), survival, reports, delta_d, (d_lo, d_hi))


def _first_true(mask: np.ndarray) -> int | None:
    hits = np.flatnonzero(mask)
    return int(hits[0]) + 1 if hits.size else None


def _monitor_worst_nu(reports: dict) -> None:
    if len(reports) < 2:
        return
    worst = max(reports, key=lambda nu: reports[nu].point)
    last = max(reports)
    if reports[worst].point > reports[last].point:
        log.info(
            "miss probability peaks at nu=%d (%.4g), not at the largest grid nu=%d (%.4g)",
            worst, reports[worst].point, last, reports[last].point,
        )
