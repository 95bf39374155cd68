import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import dense_theta_min, gaussian_bound_objective, zeta_mp
from qcd.bounds import (
    THETA_HI,
    THETA_LO,
    asymptotic_lower_bound,
    bound_report,
    golden_section,
    latency_bound_at_theta,
    latency_upper_bound,
    miss_probability_bound,
    zeta,
)
from qcd.dist import Bernoulli, DiscreteTable, GaussianMeanShift, cumulant_gen_fn
from qcd.errors import ConvergenceError, DomainError

G = GaussianMeanShift(1.0)
BERN = Bernoulli(0.2, 0.8)


def test_zeta_closed_forms():
    assert zeta(2.0) == pytest.approx(math.pi**2 / 6, abs=1e-10)
    assert zeta(4.0) == pytest.approx(math.pi**4 / 90, abs=1e-10)
    assert abs(zeta(30.0) - (1 + 2.0**-30)) < 1e-10


@settings(max_examples=80, deadline=None)
@given(st.floats(1.0001, 40.0))
def test_zeta_matches_arbitrary_precision(r):
    assert zeta(r) == pytest.approx(zeta_mp(r), rel=1e-11)


@given(st.floats(1.01, 20.0), st.floats(0.01, 5.0))
def test_zeta_decreasing(r, step):
    assert zeta(r + step) < zeta(r)


@pytest.mark.parametrize("r", [1.0, 0.5, math.inf, math.nan])
def test_zeta_domain(r):
    with pytest.raises(DomainError):
        zeta(r)


def test_bound_at_half():
    bracket = math.log(20) * 1.5 + math.log(1e4) + 0.5 * math.log(math.pi**2 / 6)
    assert bracket == pytest.approx(13.953, abs=1e-3)
    d = latency_bound_at_theta(G, 10_000, 0.05, 0.05, 2.0, 0.5)
    assert d == pytest.approx(bracket / 0.125, rel=1e-12)
    assert d == pytest.approx(111.62, abs=5e-3)


def test_running_example():
    theta, d_bar = latency_upper_bound(G, 10_000, 0.05, 0.05, 2.0)
    assert theta == pytest.approx(0.2575, abs=1e-4)
    assert d_bar == pytest.approx(90.36, abs=1e-2)
    assert d_bar <= latency_bound_at_theta(G, 10_000, 0.05, 0.05, 2.0, 0.5)


def test_stationary_point_closed_form():
    # Gaussian: d = 2(a + b t)/(t - t^2) is minimized where b t^2 + 2 a t - a = 0
    a = math.log(20)
    b = math.log(20) + 2 * math.log(1e4) + math.log(math.pi**2 / 6)
    t = (-a + math.sqrt(a * a + a * b)) / b
    theta, d_bar = latency_upper_bound(G, 10_000, 0.05, 0.05, 2.0)
    assert theta == pytest.approx(t, rel=1e-6)
    assert d_bar == pytest.approx(2 * (a + b * t) / (t - t * t), rel=1e-12)


@pytest.mark.parametrize("T", [100, 10_000, 10**8])
@pytest.mark.parametrize("r", [1.5, 2.0, 3.0])
def test_optimizer_against_dense_grid(T, r):
    f = gaussian_bound_objective(1.0, 1.0, T, 0.05, 0.05, r)
    _, grid_min = dense_theta_min(f)
    _, d_bar = latency_upper_bound(G, T, 0.05, 0.05, r)
    assert d_bar <= grid_min * (1 + 1e-12)
    assert d_bar == pytest.approx(grid_min, rel=1e-6)


def test_optimizer_against_dense_grid_discrete():
    pair = DiscreteTable((0.5, 0.3, 0.2), (0.2, 0.3, 0.5))
    lz = math.log(zeta_mp(2.0))

    def f(t):
        lam = -cumulant_gen_fn(pair, t)
        return (math.log(20) + t * (math.log(20) + 2 * math.log(1000) + lz)) / lam

    _, grid_min = dense_theta_min(f, 20_000)
    _, d_bar = latency_upper_bound(pair, 1000, 0.05, 0.05, 2.0)
    assert d_bar == pytest.approx(grid_min, rel=1e-6)


def test_squaring_the_horizon():
    t4, d4 = latency_upper_bound(G, 10**4, 0.05, 0.05, 2.0)
    t8, d8 = latency_upper_bound(G, 10**8, 0.05, 0.05, 2.0)
    assert d4 < d8 < 2 * d4
    assert t8 < t4


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10**7), st.floats(1.01, 4.0), st.floats(0.001, 0.5),
       st.floats(0.001, 0.5))
def test_upper_bound_monotone(T, r, df, dd):
    _, base = latency_upper_bound(BERN, T, df, dd, r)
    assert latency_upper_bound(BERN, T + 1, df, dd, r)[1] >= base
    assert latency_upper_bound(BERN, T, df / 2, dd, r)[1] >= base
    assert latency_upper_bound(BERN, T, df, dd / 2, r)[1] >= base


def test_bound_diverges_at_theta_edges():
    mid = latency_bound_at_theta(G, 1000, 0.05, 0.05, 2.0, 0.3)
    assert latency_bound_at_theta(G, 1000, 0.05, 0.05, 2.0, 1e-9) > 1e6 * mid
    assert latency_bound_at_theta(G, 1000, 0.05, 0.05, 2.0, 1 - 1e-9) > 1e6 * mid
    with pytest.raises(DomainError):
        latency_bound_at_theta(G, 1000, 0.05, 0.05, 2.0, 0.0)


def test_miss_bound_examples():
    assert miss_probability_bound(G, 7, 0, 0.05, 2.0, 0.4) == pytest.approx(
        (zeta_mp(2) * 49 / 0.05) ** 0.4, rel=1e-12)
    v = miss_probability_bound(G, 1, 200, 0.05, 2.0, 0.5)
    assert v == pytest.approx(math.sqrt(zeta_mp(2) * 201**2 / 0.05) * math.exp(-25), rel=1e-12)
    assert v < 0.05
    seq = [miss_probability_bound(G, 1, d, 0.05, 2.0, 0.5) for d in range(50, 400, 10)]
    assert all(b < a for a, b in zip(seq, seq[1:]))


@pytest.mark.parametrize("pair", [G, BERN])
@pytest.mark.parametrize("T", [200, 2000, 10_000])
def test_miss_bound_at_real_latency_equals_delta_d(pair, T):
    theta, d_bar = latency_upper_bound(pair, T, 0.05, 0.05, 2.0)
    # nu + d = T with the unrounded window
    v = miss_probability_bound(pair, T - d_bar, d_bar, 0.05, 2.0, theta)
    assert v == pytest.approx(0.05, rel=1e-9)


@pytest.mark.parametrize("pair", [G, BERN])
@pytest.mark.parametrize("T", [200, 2000, 10_000])
def test_miss_bound_at_rounded_latency_within_delta_d(pair, T):
    theta, d_bar = latency_upper_bound(pair, T, 0.05, 0.05, 2.0)
    d = math.ceil(d_bar)
    assert miss_probability_bound(pair, T - d, d, 0.05, 2.0, theta) <= 0.05


def test_lower_bound_values():
    g = asymptotic_lower_bound(G, 10_000, 0.05, 0.05)
    assert g == pytest.approx(math.log(1e4) + math.log(20) + math.log(0.9), abs=1e-12)
    assert g == pytest.approx(12.10, abs=5e-3)
    b = asymptotic_lower_bound(BERN, 10_000, 0.05, 0.05)
    assert b == pytest.approx(g / math.log(3.25), rel=1e-12)
    assert b == pytest.approx(10.27, abs=5e-3)


def test_lower_bound_small_margin_is_returned():
    v = asymptotic_lower_bound(G, 10, 0.5, 0.499)
    assert v < 0
    with pytest.raises(DomainError):
        asymptotic_lower_bound(G, 10, 0.5, 0.5)


@pytest.mark.parametrize("pair", [G, GaussianMeanShift(0.3), BERN,
                                  DiscreteTable((0.5, 0.3, 0.2), (0.2, 0.3, 0.5))])
@pytest.mark.parametrize("T", [100, 1000, 10**4, 10**6])
def test_sandwich_order(pair, T):
    assert asymptotic_lower_bound(pair, T, 0.05, 0.05) <= latency_upper_bound(
        pair, T, 0.05, 0.05, 2.0)[1]


def test_report():
    rep = bound_report(G, 10_000, 0.05, 0.05, 2.0)
    assert rep.upper_bound_samples == 91
    assert rep.components.total / -cumulant_gen_fn(G, rep.theta_star) == pytest.approx(
        rep.upper_bound_d, rel=1e-12)
    assert rep.valid_lower
    rep = bound_report(G, 10_000, 0.6, 0.5, 2.0)
    assert rep.lower_bound_d is None and not rep.valid_lower


def test_golden_section():
    x, fx = golden_section(lambda t: (t - 0.3) ** 2 + 1.0, 0.0, 1.0)
    assert x == pytest.approx(0.3, abs=1e-7)  # flat minimum: x resolves to ~sqrt(eps)
    assert fx == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ConvergenceError) as info:
        golden_section(lambda t: (t - 0.3) ** 2, 0.0, 1.0, max_iter=3)
    assert info.value.best is not None
    with pytest.raises(ConvergenceError):
        golden_section(lambda t: math.nan, 0.0, 1.0)


def test_theta_range_constants():
    assert THETA_LO == 1e-6 and THETA_HI == 1 - 1e-6
