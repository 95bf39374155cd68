"""Streaming CuSum detector with fixed or time-varying stopping thresholds.

The statistic follows W_n = max(W_{n-1}, 0) + llr_n with W_0 = 0, and the
detector stops at the first n with W_n >= threshold(n).  The time-varying
threshold is log(zeta(r) * n^r / delta_f), which does not depend on the
horizon.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .bounds import log_zeta
from .dist import DistributionPair, log_likelihood_ratio
from .errors import DomainError, UsageError

__all__ = [
    "DetectorState",
    "FixedThreshold",
    "TimeVaryingThreshold",
    "ThresholdPolicy",
    "StoppedAt",
    "Censored",
    "StoppingOutcome",
    "CusumDetector",
    "cusum_update",
    "cusum_statistic_batch",
    "threshold_at",
    "run_detector",
    "policy_from_params",
]


@dataclass(frozen=True)
class DetectorState:
    w: float = 0.0
    n: int = 0
    stopped_at: int | None = None

    @property
    def running(self) -> bool:
        return self.stopped_at is None


def cusum_update(state: DetectorState, llr: float) -> DetectorState:
    """One step of the CuSum recursion."""
    if not state.running:
        raise UsageError(f"detector already stopped at n={state.stopped_at}")
    return DetectorState(w=max(state.w, 0.0) + llr, n=state.n + 1)


def cusum_statistic_batch(llrs: Sequence[float]) -> float:
    """W_n straight from its definition: the largest suffix sum of ``llrs``."""
    arr = np.asarray(llrs, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise UsageError("need a nonempty 1-D sequence of LLRs")
    return float(np.cumsum(arr[::-1]).max())


@dataclass(frozen=True)
class FixedThreshold:
    b: float

    def at(self, n: int) -> float:
        return float(self.b)

    def thresholds(self, T: int) -> np.ndarray:
        """Thresholds for n = 1..T."""
        return np.full(T, float(self.b))

    def describe(self) -> str:
        return f"fixed(b={self.b!r})"


@dataclass(frozen=True)
class TimeVaryingThreshold:
    delta_f: float
    r: float
    log_zeta_r: float = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.delta_f < 1.0:
            raise DomainError(f"delta_f must lie in (0, 1), got {self.delta_f}")
        if not self.r > 1.0:
            raise DomainError(f"r must exceed 1, got {self.r}")
        object.__setattr__(self, "log_zeta_r", log_zeta(self.r))

    def at(self, n: int) -> float:
        # math.log for every n so scalar and vector paths agree bit for bit
        return self.log_zeta_r + self.r * math.log(n) - math.log(self.delta_f)

    def thresholds(self, T: int) -> np.ndarray:
        return np.array([self.at(n) for n in range(1, T + 1)], dtype=float)

    def describe(self) -> str:
        return f"tvt(delta_f={self.delta_f!r};r={self.r!r})"


ThresholdPolicy = Union[FixedThreshold, TimeVaryingThreshold]


def threshold_at(policy: ThresholdPolicy, n: int) -> float:
    if int(n) != n or n < 1:
        raise UsageError(f"thresholds are defined for n >= 1, got {n}")
    return policy.at(int(n))


@dataclass(frozen=True)
class StoppedAt:
    n: int

    stopped = True


@dataclass(frozen=True)
class Censored:
    horizon: int

    stopped = False


StoppingOutcome = Union[StoppedAt, Censored]


class CusumDetector:
    """Incremental detector: feed observations one at a time with `update`."""

    def __init__(self, pair: DistributionPair, policy: ThresholdPolicy):
        self.pair = pair
        self.policy = policy
        self.state = DetectorState()

    def update(self, x) -> bool:
        """Consume one observation; returns True if the detector stops on it."""
        self.state = cusum_update(self.state, log_likelihood_ratio(self.pair, x))
        if self.state.w >= self.policy.at(self.state.n):
            self.state = DetectorState(self.state.w, self.state.n, stopped_at=self.state.n)
            return True
        return False

    def reset(self) -> None:
        self.state = DetectorState()


def run_detector(
    pair: DistributionPair,
    policy: ThresholdPolicy,
    observations: Iterable,
    horizon: int | None = None,
) -> StoppingOutcome:
    """Run until the first threshold crossing or until the stream (or horizon) ends.

    Observations are pulled lazily; nothing past the stopping time is read.
    """
    if horizon is not None and horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {horizon}")
    det = CusumDetector(pair, policy)
    for x in observations:
        if det.update(x):
            return StoppedAt(det.state.n)
        if horizon is not None and det.state.n >= horizon:
            break
    if det.state.n == 0:
        raise UsageError("observation stream is empty")
    return Censored(det.state.n)


def policy_from_params(kind: str, **params) -> ThresholdPolicy:
    kind = kind.lower()
    if kind == "fixed":
        return FixedThreshold(float(params["b"]))
    if kind == "tvt":
        return TimeVaryingThreshold(float(params["delta_f"]), float(params["r"]))
    raise UsageError(f"unknown threshold policy {kind!r}")
