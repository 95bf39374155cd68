"""Exact finite-horizon analysis of CuSum stopping times on discrete alphabets.

When every LLR value is an integer multiple of a common gap g, W_n lives on
the lattice g*Z and the stopping-time law follows from a forward dynamic
program over ``s = max(W_n, 0) / g``.  All states with W_n <= 0 are merged
into s = 0; that is exact, because the recursion only sees max(W_n, 0).
States with W_n >= threshold(n) are absorbed at step n.

Pairs whose LLRs are not commensurate fall back to a sparse DP keyed by the
exact floating-point value of max(W_n, 0) (same arithmetic as the detector),
limited to T <= 20.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .detector import ThresholdPolicy, run_detector, StoppedAt
from .dist import DistributionPair, _FiniteAlphabet
from .errors import UnsupportedInstanceError, UsageError

__all__ = [
    "OraclePmf",
    "Lattice",
    "find_lattice",
    "exact_stopping_distribution",
    "enumerate_stopping_distribution",
    "exact_false_alarm",
    "exact_miss_probability",
    "exact_delay_profile",
    "exact_high_prob_latency",
    "WindowWitness",
    "window_bound_witness",
    "MartingaleReport",
    "martingale_checks",
]

LATTICE_TOL = 1e-9
MAX_LATTICE_T = 100_000
MAX_SPARSE_T = 20
_MAX_DENOMINATOR = 1000
_MAX_STEP = 10_000
_MAX_CELLS = 50_000_000


@dataclass(frozen=True)
class OraclePmf:
    """Exact law of the stopping time on ``{1..T} U {censored}``.

    ``p_stop[n - 1] = Pr(tau = n)``, ``p_censored = Pr(tau > T)``.
    """

    horizon: int
    p_stop: np.ndarray
    p_censored: float

    def total(self) -> float:
        return math.fsum(self.p_stop) + self.p_censored

    def cdf(self) -> np.ndarray:
        """``Pr(tau <= n)`` for n = 1..T."""
        return np.cumsum(self.p_stop)

    @property
    def false_alarm(self) -> float:
        return float(math.fsum(self.p_stop))

    def truncated(self, T: int) -> "OraclePmf":
        if not 1 <= T <= self.horizon:
            raise UsageError(f"cannot truncate a horizon-{self.horizon} pmf to T={T}")
        head = self.p_stop[:T].copy()
        return OraclePmf(T, head, float(math.fsum(self.p_stop[T:]) + self.p_censored))


@dataclass(frozen=True)
class Lattice:
    gap: float
    steps: np.ndarray  # integer LLR / gap per symbol
    p0: np.ndarray
    p1: np.ndarray


def _require_discrete(pair: DistributionPair) -> _FiniteAlphabet:
    if not isinstance(pair, _FiniteAlphabet):
        raise UnsupportedInstanceError(
            f"the exact oracle needs a discrete pair, got {pair.describe()}"
        )
    return pair


def find_lattice(pair: DistributionPair) -> Lattice | None:
    """Express every LLR value as k * gap with integer k, or return None."""
    llr, p0, p1 = _require_discrete(pair).table()
    nonzero = np.abs(llr[llr != 0])
    ref = float(nonzero.min())
    fracs = []
    for v in llr:
        ratio = v / ref
        q = Fraction(ratio).limit_denominator(_MAX_DENOMINATOR)
        if abs(float(q) - ratio) > LATTICE_TOL * max(1.0, abs(ratio)):
            return None
        fracs.append(q)
    den = 1
    for q in fracs:
        den = den * q.denominator // math.gcd(den, q.denominator)
    steps = np.array([int(q * den) for q in fracs], dtype=np.int64)
    if np.abs(steps).max() > _MAX_STEP:
        return None
    gap = ref / den
    if np.any(np.abs(steps * gap - llr) > LATTICE_TOL * np.maximum(1.0, np.abs(llr))):
        return None
    return Lattice(gap, steps, p0, p1)


def _check_horizon(T: int, nu) -> None:
    if int(T) != T or T < 1:
        raise UsageError(f"horizon must be a positive integer, got {T}")
    if nu != math.inf and (int(nu) != nu or nu < 1):
        raise UsageError(f"change point must be a positive integer or inf, got {nu}")


def _n_states(lat: Lattice, thresholds: np.ndarray, T: int) -> int:
    kmax = max(int(lat.steps.max()), 0)
    reach = T * kmax + 1
    top = float(np.max(thresholds))
    cap = math.ceil(max(top, 0.0) / lat.gap) + 2 if math.isfinite(top) else reach
    return max(min(reach, cap), 1) + 1


def _lattice_step(q: np.ndarray, lat: Lattice, probs: np.ndarray, beta: np.ndarray):
    """Advance row-stacked state vectors ``q`` (R x S) one observation.

    ``beta`` holds each row's threshold for this step.  Returns the surviving
    vectors and per-row absorbed mass.
    """
    R, S = q.shape
    s = np.arange(S)
    new = np.zeros_like(q)
    stopped = np.zeros(R)
    for k, p in zip(lat.steps, probs):
        if p == 0.0:
            continue
        k = int(k)
        t = s + k
        stop = (t * lat.gap)[None, :] >= beta[:, None]
        m = q * p
        stopped += np.where(stop, m, 0.0).sum(axis=1)
        keep = np.where(stop, 0.0, m)
        if k >= 0:
            if k and keep[:, S - k:].any():
                raise UnsupportedInstanceError("lattice state space overflow")
            new[:, k:] += keep[:, : S - k]
        else:
            j = min(-k + 1, S)
            new[:, 0] += keep[:, :j].sum(axis=1)
            if j < S:
                new[:, 1 : S + k] += keep[:, j:]
    return new, stopped


def _lattice_pmf(lat: Lattice, thresholds: np.ndarray, T: int, nu) -> OraclePmf:
    S = _n_states(lat, thresholds, T)
    if S > _MAX_CELLS:
        raise UnsupportedInstanceError(f"lattice needs {S} states")
    q = np.zeros((1, S))
    q[0, 0] = 1.0
    p_stop = np.empty(T)
    for n in range(1, T + 1):
        probs = lat.p1 if n >= nu else lat.p0
        q, stopped = _lattice_step(q, lat, probs, thresholds[n - 1 : n])
        p_stop[n - 1] = stopped[0]
    return OraclePmf(T, p_stop, float(math.fsum(q[0])))


def _sparse_pmf(pair: _FiniteAlphabet, thresholds: np.ndarray, T: int, nu) -> OraclePmf:
    llr, p0, p1 = pair.table()
    states = {0.0: 1.0}  # max(W, 0) -> mass
    p_stop = np.zeros(T)
    for n in range(1, T + 1):
        probs = p1 if n >= nu else p0
        beta = thresholds[n - 1]
        nxt: dict[float, float] = {}
        for w, mass in states.items():
            for v, p in zip(llr, probs):
                if p == 0.0:
                    continue
                W = w + v
                if W >= beta:
                    p_stop[n - 1] += mass * p
                else:
                    key = max(W, 0.0)
                    nxt[key] = nxt.get(key, 0.0) + mass * p
        states = nxt
    return OraclePmf(T, p_stop, float(math.fsum(states.values())))


def exact_stopping_distribution(
    pair: DistributionPair, policy: ThresholdPolicy, T: int, nu=math.inf
) -> OraclePmf:
    """Exact pmf of the stopping time under ``Pr_nu`` (``nu=math.inf``: no change)."""
    _check_horizon(T, nu)
    disc = _require_discrete(pair)
    thresholds = policy.thresholds(T)
    lat = find_lattice(disc)
    if lat is not None:
        if T > MAX_LATTICE_T:
            raise UnsupportedInstanceError(f"lattice DP limited to T <= {MAX_LATTICE_T}")
        return _lattice_pmf(lat, thresholds, T, nu)
    if T > MAX_SPARSE_T:
        raise UnsupportedInstanceError(
            f"LLRs of {pair.describe()} are not on a common lattice; exact analysis "
            f"is limited to T <= {MAX_SPARSE_T}"
        )
    return _sparse_pmf(disc, thresholds, T, nu)


def enumerate_stopping_distribution(
    pair: DistributionPair, policy: ThresholdPolicy, T: int, nu=math.inf
) -> OraclePmf:
    """Brute force over all alphabet^T paths, running the real detector on each.

    Independent of the DP; only practical for tiny T.
    """
    _check_horizon(T, nu)
    disc = _require_discrete(pair)
    symbols = np.flatnonzero(disc._p0 > 0)
    p_stop = np.zeros(T)
    censored = []
    for path in itertools.product(symbols.tolist(), repeat=T):
        weight = math.prod(
            (disc._p1 if i >= nu else disc._p0)[x] for i, x in enumerate(path, start=1)
        )
        outcome = run_detector(disc, policy, path)
        if isinstance(outcome, StoppedAt):
            p_stop[outcome.n - 1] += weight
        else:
            censored.append(weight)
    return OraclePmf(T, p_stop, math.fsum(censored))


def exact_false_alarm(pair: DistributionPair, policy: ThresholdPolicy, T: int) -> float:
    """``Pr_inf(tau <= T)``."""
    pmf = exact_stopping_distribution(pair, policy, T, math.inf)
    return 1.0 - pmf.p_censored


def exact_miss_probability(
    pair: DistributionPair, policy: ThresholdPolicy, T: int, nu: int, d: int
) -> float:
    """``Pr_nu(tau >= nu + d)`` for ``1 <= nu <= T - d``."""
    if not 1 <= nu <= T - d or d < 1:
        raise UsageError(f"need 1 <= nu <= T - d and d >= 1 (nu={nu}, d={d}, T={T})")
    pmf = exact_stopping_distribution(pair, policy, nu + d - 1, nu)
    return pmf.p_censored


def exact_delay_profile(
    pair: DistributionPair, policy: ThresholdPolicy, T: int, delta_d: float
) -> np.ndarray:
    """For each change point nu = 1..T-1, the smallest d with ``Pr_nu(tau >= nu + d) <= delta_d``.

    Entries are ``inf`` when no d <= T - nu works.  Index ``nu - 1`` holds nu.
    """
    if int(T) != T or T < 2:
        raise UsageError(f"latency needs a horizon T >= 2, got {T}")
    if not 0.0 < delta_d <= 1.0:
        raise UsageError(f"delta_d must lie in (0, 1], got {delta_d}")
    disc = _require_discrete(pair)
    thresholds = policy.thresholds(T)
    lat = find_lattice(disc)
    if lat is None:
        if T > MAX_SPARSE_T:
            raise UnsupportedInstanceError(
                f"non-lattice pair; exact latency limited to T <= {MAX_SPARSE_T}"
            )
        return _sparse_delay_profile(disc, policy, T, delta_d)

    S = _n_states(lat, thresholds, T)
    if S * T > _MAX_CELLS:
        raise UnsupportedInstanceError(f"latency DP needs {S} x {T} cells")
    # pre-change survivors at times 0..T-2 seed the rows for nu = 1..T-1
    rows = np.zeros((T - 1, S))
    q = np.zeros((1, S))
    q[0, 0] = 1.0
    for m in range(T - 1):
        rows[m] = q[0]
        q, _ = _lattice_step(q, lat, lat.p0, thresholds[m : m + 1])

    nus = np.arange(1, T)
    delay = np.full(T - 1, np.inf)
    active = np.ones(T - 1, dtype=bool)
    j = 0
    while active.any():
        j += 1
        active &= nus <= T - j
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        # row nu takes its j-th post-change observation at time nu + j - 1
        beta = thresholds[nus[idx] + j - 2]
        rows[idx], _ = _lattice_step(rows[idx], lat, lat.p1, beta)
        # summing can round a little above 1
        survival = np.minimum(rows[idx].sum(axis=1), 1.0)
        done = idx[survival <= delta_d]
        delay[done] = j
        active[done] = False
    return delay


def _sparse_delay_profile(pair, policy, T, delta_d) -> np.ndarray:
    delay = np.full(T - 1, np.inf)
    for nu in range(1, T):
        pmf = exact_stopping_distribution(pair, policy, T - 1, nu)
        cdf = pmf.cdf()
        for d in range(1, T - nu + 1):
            # Pr_nu(tau >= nu + d) = 1 - Pr(tau <= nu + d - 1)
            if 1.0 - cdf[nu + d - 2] <= delta_d:
                delay[nu - 1] = d
                break
    return delay


def _latency_predicate(delay: np.ndarray, T: int, d: int) -> bool:
    return bool(np.all(delay[: T - d] <= d))


def exact_high_prob_latency(
    pair: DistributionPair,
    policy: ThresholdPolicy,
    T: int,
    delta_d: float,
    verify: bool = False,
) -> int | None:
    """Smallest d with ``Pr_nu(tau >= nu + d) <= delta_d`` for every nu in 1..T-d.

    Returns None when no d <= T - 1 qualifies.  The predicate is monotone in d,
    so a binary search is used; ``verify=True`` re-derives the answer by a
    linear scan and raises on disagreement.
    """
    delay = exact_delay_profile(pair, policy, T, delta_d)
    if not _latency_predicate(delay, T, T - 1):
        result = None
    else:
        lo, hi = 1, T - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if _latency_predicate(delay, T, mid):
                hi = mid
            else:
                lo = mid + 1
        result = lo
    if verify:
        scan = next((d for d in range(1, T) if _latency_predicate(delay, T, d)), None)
        if scan != result:
            raise AssertionError(f"binary search gave {result}, linear scan gave {scan}")
    return result


@dataclass(frozen=True)
class WindowWitness:
    nu: int
    mass: float  # Pr_inf(nu <= tau < nu + d)
    bound: float  # delta_f / floor(T / d)

    @property
    def holds(self) -> bool:
        return self.mass <= self.bound

    @property
    def at_zero(self) -> bool:
        return self.nu == 0


def window_bound_witness(pmf_inf: OraclePmf, T: int, d: int, delta_f: float) -> WindowWitness:
    """Least-mass window ``[nu, nu + d)`` with nu in 0..T-d under the no-change law."""
    if not 1 <= d <= T:
        raise UsageError(f"need 1 <= d <= T (d={d}, T={T})")
    if T > pmf_inf.horizon:
        raise UsageError(f"pmf covers horizon {pmf_inf.horizon} < T={T}")
    cdf = np.concatenate([[0.0], np.cumsum(pmf_inf.p_stop[:T])])  # cdf[n] = Pr(tau <= n)
    if cdf[T] > delta_f:
        raise UsageError(f"false-alarm constraint fails: Pr(tau <= {T}) = {cdf[T]} > {delta_f}")
    starts = np.arange(0, T - d + 1)
    # tau >= 1, so the window [nu, nu + d) holds tau in max(nu, 1) .. nu + d - 1
    mass = cdf[starts + d - 1] - cdf[np.maximum(starts - 1, 0)]
    mass = np.maximum(mass, 0.0)
    best = int(np.argmin(mass))
    return WindowWitness(int(starts[best]), float(mass[best]), delta_f / (T // d))


@dataclass(frozen=True)
class MartingaleReport:
    n: int
    r: float
    lr_mean_pre: float  # E_f0[f1/f0], equals 1
    lr_mean_post: float  # E_f1[f1/f0] = e^C
    super_means: np.ndarray  # E_inf[(n+m)^-r * prod_{i=n}^{n+m} LR_i], m = 0..m_max
    super_ratios: np.ndarray  # E[M_{m+1} | F_m] / M_m, m = 0..m_max-1
    sub_means: np.ndarray  # E_nu[prod of m post-change LRs], m = 0..m_max

    @property
    def supermartingale_ok(self) -> bool:
        return bool(np.all(self.super_ratios <= 1.0 + 1e-15)
                    and np.all(np.diff(self.super_means) < 0))

    @property
    def submartingale_ok(self) -> bool:
        return bool(self.lr_mean_post >= 1.0 and np.all(np.diff(self.sub_means) >= 0))


def martingale_checks(pair: DistributionPair, n: int, r: float, m_max: int) -> MartingaleReport:
    """Exact mean-sequence checks for the two likelihood-ratio martingale properties.

    Observations are i.i.d., so the expected product of likelihood ratios is
    the per-symbol mean raised to the number of factors; the per-symbol means
    are exact finite sums over the alphabet.
    """
    if not 1 <= m_max <= 30:
        raise UsageError(f"m_max must lie in 1..30, got {m_max}")
    if n < 1 or not r > 1.0:
        raise UsageError("need n >= 1 and r > 1")
    llr, p0, p1 = _require_discrete(pair).table()
    lr = np.exp(llr)
    pre = math.fsum(p0 * lr)
    post = math.fsum(p1 * lr)
    m = np.arange(m_max + 1)
    super_means = (n + m).astype(float) ** (-r) * pre ** (m + 1)
    super_ratios = ((n + m[:-1]) / (n + m[:-1] + 1.0)) ** r * pre
    sub_means = post ** m.astype(float)
    return MartingaleReport(n, r, pre, post, super_means, super_ratios, sub_means)
