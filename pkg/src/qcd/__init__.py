"""Quickest change detection with a time-varying-threshold CuSum test."""

__version__ = "0.1.0"

from .bounds import (
    asymptotic_lower_bound,
    bound_report,
    latency_bound_at_theta,
    latency_upper_bound,
    log_zeta,
    miss_probability_bound,
    zeta,
)
from .detector import (
    Censored,
    CusumDetector,
    FixedThreshold,
    StoppedAt,
    TimeVaryingThreshold,
    cusum_statistic_batch,
    cusum_update,
    run_detector,
    threshold_at,
)
from .dist import (
    Bernoulli,
    DiscreteTable,
    GaussianMeanShift,
    TrajectorySpec,
    channel_constant,
    cumulant_gen_fn,
    kl_divergence,
    log_likelihood_ratio,
    sample_trajectory,
)
from .errors import ConvergenceError, DomainError, QCDError, UnsupportedInstanceError, UsageError
from .montecarlo import (
    clopper_pearson,
    empirical_latency,
    estimate_false_alarm,
    estimate_miss,
    simulate_stopping_times,
)
from .oracle import (
    enumerate_stopping_distribution,
    exact_false_alarm,
    exact_high_prob_latency,
    exact_miss_probability,
    exact_stopping_distribution,
    martingale_checks,
    window_bound_witness,
)
from .rng import trial_stream

__all__ = [
    "__version__",
    "asymptotic_lower_bound",
    "bound_report",
    "latency_bound_at_theta",
    "latency_upper_bound",
    "log_zeta",
    "miss_probability_bound",
    "zeta",
    "Censored",
    "CusumDetector",
    "FixedThreshold",
    "StoppedAt",
    "TimeVaryingThreshold",
    "cusum_statistic_batch",
    "cusum_update",
    "run_detector",
    "threshold_at",
    "Bernoulli",
    "DiscreteTable",
    "GaussianMeanShift",
    "TrajectorySpec",
    "channel_constant",
    "cumulant_gen_fn",
    "kl_divergence",
    "log_likelihood_ratio",
    "sample_trajectory",
    "clopper_pearson",
    "empirical_latency",
    "estimate_false_alarm",
    "estimate_miss",
    "simulate_stopping_times",
    "enumerate_stopping_distribution",
    "exact_false_alarm",
    "exact_high_prob_latency",
    "exact_miss_probability",
    "exact_stopping_distribution",
    "martingale_checks",
    "window_bound_witness",
    "trial_stream",
    "ConvergenceError",
    "DomainError",
    "QCDError",
    "UnsupportedInstanceError",
    "UsageError",
]
