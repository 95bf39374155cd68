"""Pre/post-change distribution pairs and their information quantities.

Every pair exposes the log-likelihood ratio ``log f1(x) - log f0(x)`` (nats),
trajectory sampling under the change-point model, and three scalars used by
the latency bounds:

* ``cumulant_gen_fn(theta)``: log E_f1[exp(theta * log(f0(X)/f1(X)))]
* ``channel_constant()``:     log E_f1[f1(X)/f0(X)]
* ``kl_divergence()``:        E_f1[log(f1(X)/f0(X))]

Convention: under ``Pr_nu`` observations with (1-based) index ``i >= nu`` are
drawn from f1, all earlier ones from f0.  ``nu = math.inf`` means no change.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, UsageError

__all__ = [
    "DistributionPair",
    "GaussianMeanShift",
    "Bernoulli",
    "DiscreteTable",
    "TrajectorySpec",
    "log_likelihood_ratio",
    "sample_trajectory",
    "cumulant_gen_fn",
    "channel_constant",
    "kl_divergence",
    "pair_from_params",
]

_PROB_SUM_TOL = 1e-12


class DistributionPair(abc.ABC):
    """An immutable (f0, f1) pair of densities on the real line."""

    family: ClassVar[str]

    @abc.abstractmethod
    def llr(self, x) -> np.ndarray:
        """Vectorized LLR, no support checks. Use `log_likelihood_ratio` for scalars."""

    @abc.abstractmethod
    def noise(self, gen: np.random.Generator, n: int, out: np.ndarray | None = None) -> np.ndarray:
        """Draw ``n`` base variates (standard normals or uniforms) from ``gen``."""

    @abc.abstractmethod
    def observe(self, noise: np.ndarray, post: np.ndarray | bool) -> np.ndarray:
        """Map base variates to observations; ``post`` selects f1 elementwise."""

    @abc.abstractmethod
    def cumulant_gen_fn(self, theta: float) -> float: ...

    @abc.abstractmethod
    def channel_constant(self) -> float: ...

    @abc.abstractmethod
    def kl_divergence(self) -> float: ...

    @abc.abstractmethod
    def in_support(self, x) -> bool: ...

    @abc.abstractmethod
    def params(self) -> dict: ...

    def llr_from_noise(self, noise: np.ndarray, post: np.ndarray | bool) -> np.ndarray:
        return self.llr(self.observe(noise, post))

    def describe(self) -> str:
        inner = ";".join(f"{k}={_fmt_param(v)}" for k, v in self.params().items())
        return f"{self.family}({inner})"


def _fmt_param(v) -> str:
    if isinstance(v, (tuple, list)):
        return "[" + " ".join(repr(float(t)) for t in v) + "]"
    return repr(v)


@dataclass(frozen=True)
class GaussianMeanShift(DistributionPair):
    """f0 = N(0, sigma^2), f1 = N(mu, sigma^2)."""

    mu: float
    sigma: float = 1.0

    family: ClassVar[str] = "gaussian"

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise DomainError("gaussian parameters must be finite")
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.mu == 0:
            raise DomainError("mu = 0 makes f0 and f1 identical")

    @property
    def _snr(self) -> float:
        return (self.mu / self.sigma) ** 2

    def llr(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.mu * (x - 0.5 * self.mu) / self.sigma**2

    def noise(self, gen, n, out=None):
        if out is None:
            return gen.standard_normal(n)
        return gen.standard_normal(out=out[:n])

    def observe(self, noise, post):
        return self.sigma * noise + self.mu * np.asarray(post, dtype=float)

    def cumulant_gen_fn(self, theta: float) -> float:
        return 0.5 * self._snr * theta * (theta - 1.0)

    def channel_constant(self) -> float:
        return self._snr

    def kl_divergence(self) -> float:
        return 0.5 * self._snr

    def in_support(self, x) -> bool:
        return bool(np.isfinite(x))

    def params(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma}


class _FiniteAlphabet(DistributionPair):
    """Shared machinery for pairs on the alphabet {0, ..., K-1}."""

    _p0: np.ndarray
    _p1: np.ndarray
    _llr_table: np.ndarray
    _cdf0: np.ndarray
    _cdf1: np.ndarray

    def _setup(self, p0, p1):
        p0 = np.asarray(p0, dtype=float)
        p1 = np.asarray(p1, dtype=float)
        if p0.ndim != 1 or p0.shape != p1.shape or p0.size < 2:
            raise DomainError("probability vectors must be 1-D, equal length, size >= 2")
        for name, p in (("p0", p0), ("p1", p1)):
            if np.any(~np.isfinite(p)) or np.any(p < 0):
                raise DomainError(f"{name} has negative or non-finite entries")
            if abs(p.sum() - 1.0) > _PROB_SUM_TOL:
                raise DomainError(f"{name} sums to {p.sum()!r}, not 1")
        if np.any((p1 > 0) & (p0 == 0)):
            raise DomainError("support(f1) must be contained in support(f0)")
        if np.any((p0 > 0) & (p1 == 0)):
            raise DomainError(
                "support(f0) must be contained in support(f1) (LLR would be -inf)"
            )
        if np.all(p0 == p1):
            raise DomainError("f0 and f1 are identical")
        pos = p0 > 0
        table = np.full(p0.shape, np.nan)
        table[pos] = np.log(p1[pos]) - np.log(p0[pos])
        # object.__setattr__ because concrete subclasses are frozen dataclasses
        object.__setattr__(self, "_p0", p0)
        object.__setattr__(self, "_p1", p1)
        object.__setattr__(self, "_llr_table", table)
        object.__setattr__(self, "_cdf0", _cdf(p0))
        object.__setattr__(self, "_cdf1", _cdf(p1))
        if not math.isfinite(self.channel_constant()):
            raise DomainError("channel constant C is not finite")

    @property
    def alphabet_size(self) -> int:
        return int(self._p0.size)

    def table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(llr, p0, p1)`` restricted to the common support."""
        pos = self._p0 > 0
        return self._llr_table[pos].copy(), self._p0[pos].copy(), self._p1[pos].copy()

    def llr(self, x) -> np.ndarray:
        return self._llr_table[np.asarray(x, dtype=np.intp)]

    def noise(self, gen, n, out=None):
        if out is None:
            return gen.random(n)
        return gen.random(out=out[:n])

    def observe(self, noise, post):
        noise = np.asarray(noise)
        post = np.broadcast_to(np.asarray(post, dtype=bool), noise.shape)
        x0 = np.searchsorted(self._cdf0, noise, side="right")
        x1 = np.searchsorted(self._cdf1, noise, side="right")
        return np.where(post, x1, x0)

    def cumulant_gen_fn(self, theta: float) -> float:
        pos = self._p1 > 0
        lp1 = np.log(self._p1[pos])
        lp0 = np.log(self._p0[pos])
        return float(logsumexp(lp1 + theta * (lp0 - lp1)))

    def channel_constant(self) -> float:
        pos = self._p1 > 0
        lp1 = np.log(self._p1[pos])
        return float(logsumexp(2 * lp1 - np.log(self._p0[pos])))

    def kl_divergence(self) -> float:
        pos = self._p1 > 0
        return float(np.sum(self._p1[pos] * self._llr_table[pos]))

    def in_support(self, x) -> bool:
        try:
            xi = int(x)
        except (TypeError, ValueError):
            return False
        return xi == x and 0 <= xi < self._p0.size and self._p0[xi] > 0


def _cdf(p: np.ndarray) -> np.ndarray:
    # right-closed bins for searchsorted; the last edge is forced to 1 so u < 1 never overflows
    c = np.cumsum(p)[:-1]
    return np.minimum(c, 1.0)


@dataclass(frozen=True)
class Bernoulli(_FiniteAlphabet):
    """Observations in {0, 1}; ``P(X = 1)`` is ``p0`` before and ``p1`` after the change."""

    p0: float
    p1: float

    family: ClassVar[str] = "bernoulli"

    def __post_init__(self):
        for name, p in (("p0", self.p0), ("p1", self.p1)):
            if not 0.0 < p < 1.0:
                raise DomainError(f"{name} must lie strictly inside (0, 1), got {p}")
        if self.p0 == self.p1:
            raise DomainError("p0 == p1 makes f0 and f1 identical")
        self._setup([1.0 - self.p0, self.p0], [1.0 - self.p1, self.p1])

    def observe(self, noise, post):
        p = np.where(np.asarray(post, dtype=bool), self.p1, self.p0)
        return (np.asarray(noise) < p).astype(np.int8)

    def params(self) -> dict:
        return {"p0": self.p0, "p1": self.p1}


@dataclass(frozen=True)
class DiscreteTable(_FiniteAlphabet):
    """General finite alphabet given by two probability vectors."""

    p0: tuple[float, ...]
    p1: tuple[float, ...]

    family: ClassVar[str] = "table"

    def __post_init__(self):
        object.__setattr__(self, "p0", tuple(float(v) for v in self.p0))
        object.__setattr__(self, "p1", tuple(float(v) for v in self.p1))
        self._setup(self.p0, self.p1)

    def params(self) -> dict:
        return {"p0": self.p0, "p1": self.p1}


@dataclass(frozen=True)
class TrajectorySpec:
    pair: DistributionPair
    nu: float  # int change point, or math.inf
    horizon: int

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise UsageError(f"horizon must be a positive integer, got {self.horizon}")
        if self.nu != math.inf:
            if int(self.nu) != self.nu or not 1 <= self.nu <= self.horizon:
                raise UsageError(f"change point must be in 1..{self.horizon} or inf, got {self.nu}")

    def post_mask(self, start: int = 1, stop: int | None = None) -> np.ndarray:
        """Boolean f1-indicator for 1-based indices ``start .. stop``."""
        stop = self.horizon if stop is None else stop
        idx = np.arange(start, stop + 1)
        return idx >= self.nu


def log_likelihood_ratio(pair: DistributionPair, x) -> float:
    """``log f1(x) - log f0(x)`` in nats for a single observation."""
    if not pair.in_support(x):
        raise DomainError(f"{x!r} is outside the common support of {pair.describe()}")
    value = float(pair.llr(x))
    if not math.isfinite(value):
        raise DomainError(f"LLR at {x!r} is not finite")
    return value


def sample_trajectory(spec: TrajectorySpec, rng: np.random.Generator) -> np.ndarray:
    """Draw ``X_1 .. X_T`` under ``Pr_nu``; deterministic given the generator state."""
    z = spec.pair.noise(rng, spec.horizon)
    return spec.pair.observe(z, spec.post_mask())


def cumulant_gen_fn(pair: DistributionPair, theta: float) -> float:
    if not 0.0 <= theta <= 1.0:
        raise DomainError(f"theta must lie in [0, 1], got {theta}")
    value = pair.cumulant_gen_fn(float(theta))
    if not math.isfinite(value):
        raise DomainError(f"cumulant generating function is not finite at theta={theta}")
    return value


def channel_constant(pair: DistributionPair) -> float:
    value = pair.channel_constant()
    if not math.isfinite(value):
        raise DomainError("E_f1[f1/f0] diverges")
    return value


def kl_divergence(pair: DistributionPair) -> float:
    value = pair.kl_divergence()
    if not math.isfinite(value):
        raise DomainError("kl(f1; f0) diverges")
    return value


def pair_from_params(family: str, **params) -> DistributionPair:
    """Build a pair from a family name and keyword parameters (config/CLI entry point)."""
    family = family.lower()
    if family == "gaussian":
        return GaussianMeanShift(float(params["mu"]), float(params.get("sigma", 1.0)))
    if family == "bernoulli":
        return Bernoulli(float(params["p0"]), float(params["p1"]))
    if family == "table":
        return DiscreteTable(tuple(params["p0"]), tuple(params["p1"]))
    raise UsageError(f"unknown distribution family {family!r}")
