"""Latency bounds for the time-varying-threshold CuSum test.

The upper bound minimizes, over theta in (0, 1),

    d(theta) = [log(1/dD) + theta*log(1/dF) + r*theta*log(T) + theta*log(zeta(r))] / |Lambda(theta)|

where Lambda is the cumulant generating function of log(f0/f1) under f1.
The lower bound is the leading-order expression

    (1/C) * [log(T) + log(1/dF) + log(1 - dF - dD)],   C = log E_f1[f1/f0],

which only holds asymptotically in T; at small horizons it can be negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dist import DistributionPair, channel_constant, cumulant_gen_fn
from .errors import ConvergenceError, DomainError

__all__ = [
    "zeta",
    "log_zeta",
    "latency_bound_at_theta",
    "latency_upper_bound",
    "miss_probability_bound",
    "asymptotic_lower_bound",
    "golden_section",
    "BoundComponents",
    "BoundReport",
    "bound_report",
    "THETA_LO",
    "THETA_HI",
]

THETA_LO = 1e-6
THETA_HI = 1.0 - 1e-6
_COARSE_POINTS = 64

# B_2, B_4, ..., B_18
_BERNOULLI_EVEN = (
    1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6, -3617 / 510, 43867 / 798,
)
_ZETA_TAIL_TOL = 1e-12


def zeta(r: float) -> float:
    """Riemann zeta for real ``r > 1``.

    Partial sum up to N-1, the integral tail N^(1-r)/(r-1), and Euler-Maclaurin
    corrections for the difference between the tail sum and the integral.
    N doubles until the first omitted correction is below 1e-12.
    """
    r = float(r)
    if not r > 1.0 or not math.isfinite(r):
        raise DomainError(f"zeta(r) diverges for r <= 1 (got r={r})")
    n_terms = 16
    while True:
        value, omitted = _zeta_em(r, n_terms)
        if abs(omitted) < _ZETA_TAIL_TOL or n_terms > 1 << 16:
            return value
        n_terms *= 2


def _zeta_em(r: float, n: int) -> tuple[float, float]:
    idx = np.arange(1, n, dtype=float)
    head = math.fsum(idx ** (-r))
    tail = n ** (1.0 - r) / (r - 1.0) + 0.5 * n ** (-r)
    # sum_k B_2k/(2k)! * r(r+1)...(r+2k-2) * n^(-r-2k+1)
    rising = r  # r(r+1)...(r+2k-2), starting at k=1
    fact = 2.0  # (2k)!
    corrections = []
    for k, b in enumerate(_BERNOULLI_EVEN, start=1):
        corrections.append(b / fact * rising * n ** (-r - 2 * k + 1))
        rising *= (r + 2 * k - 1) * (r + 2 * k)
        fact *= (2 * k + 1) * (2 * k + 2)
    omitted = corrections.pop()
    return head + tail + math.fsum(corrections), omitted


def log_zeta(r: float) -> float:
    return math.log(zeta(r))


def _check_delta(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise DomainError(f"{name} must lie in (0, 1), got {value}")


def _check_common(T: int, delta_f: float, delta_d: float, r: float) -> None:
    if int(T) != T or T < 1:
        raise DomainError(f"horizon must be a positive integer, got {T}")
    _check_delta("delta_f", delta_f)
    _check_delta("delta_d", delta_d)
    if not r > 1.0:
        raise DomainError(f"r must exceed 1, got {r}")


@dataclass(frozen=True)
class BoundComponents:
    """The four bracket terms (nats) of the upper bound at a given theta."""

    log_inv_delta_d: float
    theta_log_inv_delta_f: float
    r_theta_log_T: float
    theta_log_zeta: float

    @property
    def total(self) -> float:
        return (self.log_inv_delta_d + self.theta_log_inv_delta_f
                + self.r_theta_log_T + self.theta_log_zeta)


def _components(T, delta_f, delta_d, r, theta, lz) -> BoundComponents:
    return BoundComponents(
        log_inv_delta_d=-math.log(delta_d),
        theta_log_inv_delta_f=-theta * math.log(delta_f),
        r_theta_log_T=r * theta * math.log(T),
        theta_log_zeta=theta * lz,
    )


def latency_bound_at_theta(
    pair: DistributionPair, T: int, delta_f: float, delta_d: float, r: float, theta: float
) -> float:
    """The real-valued latency bound for one fixed theta in (0, 1)."""
    _check_common(T, delta_f, delta_d, r)
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie strictly inside (0, 1), got {theta}")
    lam = cumulant_gen_fn(pair, theta)
    if lam >= 0.0:
        raise DomainError(f"Lambda({theta}) = {lam} is not negative")
    return _components(T, delta_f, delta_d, r, theta, log_zeta(r)).total / abs(lam)


def golden_section(
    f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-10, max_iter: int = 200
) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``.

    Raises ConvergenceError (carrying the best iterate) if the bracket does not
    shrink below ``xtol`` within ``max_iter`` steps or ``f`` goes non-finite.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    best = min((fc, c), (fd, d))
    for _ in range(max_iter):
        if not (math.isfinite(fc) and math.isfinite(fd)):
            raise ConvergenceError("objective is not finite", best=(best[1], best[0]))
        if b - a <= xtol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
        best = min(best, (fc, c), (fd, d))
    else:
        raise ConvergenceError(
            f"golden section did not converge in {max_iter} iterations", best=(best[1], best[0])
        )
    return best[1], best[0]


def latency_upper_bound(
    pair: DistributionPair, T: int, delta_f: float, delta_d: float, r: float
) -> tuple[float, float]:
    """Return ``(theta_star, d_bar)`` minimizing the bound over theta.

    A 64-point grid on [1e-6, 1 - 1e-6] picks the bracket around the best grid
    point, then golden-section search refines inside it.
    """
    _check_common(T, delta_f, delta_d, r)
    lz = log_zeta(r)
    a = -math.log(delta_d)
    b = -math.log(delta_f) + r * math.log(T) + lz

    def objective(theta: float) -> float:
        return (a + b * theta) / -cumulant_gen_fn(pair, theta)

    grid = np.linspace(THETA_LO, THETA_HI, _COARSE_POINTS)
    values = np.array([objective(t) for t in grid])
    if not np.all(np.isfinite(values)):
        bad = grid[~np.isfinite(values)][0]
        raise ConvergenceError(f"bound objective not finite at theta={bad}")
    i = int(np.argmin(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, _COARSE_POINTS - 1)]
    theta, value = golden_section(objective, lo, hi)
    if values[i] < value:
        theta, value = grid[i], values[i]
    return float(theta), float(value)


def miss_probability_bound(
    pair: DistributionPair, nu: int, d: float, delta_f: float, r: float, theta: float
) -> float:
    """Chernoff bound on ``Pr_nu(tau >= nu + d)``; may exceed 1.

    ``(zeta(r) * (nu + d)^r / delta_f)^theta * exp(d * Lambda(theta))``.
    ``d`` may be real so the bound can be evaluated at the unrounded latency.
    """
    if nu < 1:
        raise DomainError(f"nu must be >= 1, got {nu}")
    if d < 0:
        raise DomainError(f"d must be nonnegative, got {d}")
    _check_delta("delta_f", delta_f)
    if not r > 1.0:
        raise DomainError(f"r must exceed 1, got {r}")
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie strictly inside (0, 1), got {theta}")
    log_barrier = log_zeta(r) + r * math.log(nu + d) - math.log(delta_f)
    return math.exp(theta * log_barrier + d * cumulant_gen_fn(pair, theta))


def asymptotic_lower_bound(pair: DistributionPair, T: int, delta_f: float, delta_d: float) -> float:
    """Leading-order lower bound on the optimal latency (o(1) terms dropped)."""
    if int(T) != T or T < 1:
        raise DomainError(f"horizon must be a positive integer, got {T}")
    _check_delta("delta_f", delta_f)
    _check_delta("delta_d", delta_d)
    if delta_f + delta_d >= 1.0:
        raise DomainError(
            f"lower bound hypothesis violated: delta_f + delta_d = {delta_f + delta_d} >= 1"
        )
    c = channel_constant(pair)
    return (math.log(T) - math.log(delta_f) + math.log1p(-delta_f - delta_d)) / c


@dataclass(frozen=True)
class BoundReport:
    T: int
    delta_f: float
    delta_d: float
    r: float
    theta_star: float
    upper_bound_d: float
    components: BoundComponents
    lower_bound_d: float | None  # leading-order only; None when delta_f + delta_d >= 1
    valid_lower: bool

    @property
    def upper_bound_samples(self) -> int:
        return math.ceil(self.upper_bound_d)


def bound_report(
    pair: DistributionPair, T: int, delta_f: float, delta_d: float, r: float
) -> BoundReport:
    theta, d_bar = latency_upper_bound(pair, T, delta_f, delta_d, r)
    valid = delta_f + delta_d < 1.0
    lower = asymptotic_lower_bound(pair, T, delta_f, delta_d) if valid else None
    return BoundReport(
        T=int(T),
        delta_f=delta_f,
        delta_d=delta_d,
        r=r,
        theta_star=theta,
        upper_bound_d=d_bar,
        components=_components(T, delta_f, delta_d, r, theta, log_zeta(r)),
        lower_bound_d=lower,
        valid_lower=valid,
    )
