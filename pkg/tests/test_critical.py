from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from towerdyn.critical import (build_table, check_summability, choose_gamma, classify_dn,
                               classify_growth, closest_returns, compensated_cumsum,
                               compute_bn, compute_Dn, compute_dn, CriticalOrbitTable,
                               fibonacci_kneading, fibonacci_map, fibonacci_numbers,
                               fibonacci_scaling_check, find_fibonacci_parameter,
                               fitted_scaling, kneading_compare, star_summand)
from towerdyn.errors import (BracketError, DegenerateSequence, InvalidSeries,
                             WindowTooShort)
from towerdyn.maps import make_map

LOG4 = math.log(4.0)
FIB12 = [1, 2, 3, 5, 8, 13, 21, 34, 55, 89, 144, 233]


@pytest.fixture(scope="module")
def full():
    return make_map("logistic", [4.0])


@pytest.fixture(scope="module")
def fib_map():
    a = find_fibonacci_parameter("quadratic-normal", (1.8, 2.0))
    return fibonacci_map("normal", a)


def test_dn_full_quadratic(full):
    logD = compute_Dn(full, 0.5, 50)
    np.testing.assert_allclose(logD, LOG4 * np.arange(1, 51), atol=1e-8)
    assert compute_Dn(full, 0.5, 1) == pytest.approx([LOG4])


def test_equalizing_gamma_and_b(full):
    t = build_table(full, 0.5, 200)
    n = np.arange(1, 201)
    expected = 4.0 ** (-n / 3.0)
    assert t.gamma[0] == 0.49
    np.testing.assert_allclose(t.gamma[1:], expected[1:], rtol=1e-12)
    np.testing.assert_allclose(t.b[1:], expected[1:], rtol=1e-12)
    # the (*) summand equals b_n wherever gamma is uncapped
    np.testing.assert_allclose(star_summand(t.logD, 2.0)[1:], t.b[1:], rtol=1e-12)


def test_gamma_cap_branch():
    assert choose_gamma(np.array([0.0]), 2.0)[0] == 0.49


def test_user_series_gamma():
    logD = np.log(np.arange(1, 101, dtype=float) ** 4)
    g = 0.01 * np.exp(-logD / 2)
    np.testing.assert_array_equal(choose_gamma(logD, 2.0, "user-series", g), g)
    with pytest.raises(InvalidSeries):
        choose_gamma(logD, 2.0, "user-series", np.full(100, 0.6))
    with pytest.raises(InvalidSeries):
        choose_gamma(logD, 2.0, "user-series", np.full(100, 0.1))


def test_dn_small_table(full):
    # capped gamma_1 = 0.49: d_2 = (0.49 / 4)^(1/2) * 0.5
    t = build_table(full, 0.5, 3)
    assert t.d[0] == pytest.approx(math.sqrt(0.49 / 4) * 0.5, rel=1e-14)
    assert t.d[1] == pytest.approx(4 ** (-4 / 3) * 0.5, rel=1e-12)
    assert build_table(full, 0.5, 1).d.size == 0


def test_table_invariants(full):
    for m in (full, make_map("logistic", [3.9]), make_map("cubic", [0.95, 0.02])):
        for t in [build_table(m, c, 500) for c in m.critical_points]:
            assert np.all(np.diff(t.d) <= 0)
            assert np.all(t.d <= t.gamma[:-1] * t.b[:-1] * (1 + 1e-12))
            assert np.all((t.gamma > 0) & (t.gamma < 0.5))
            np.testing.assert_allclose(
                t.b, np.exp(-(np.log(t.gamma) + t.logD) / 2.0), rtol=1e-14)


def test_summability_full(full):
    rep = check_summability(build_table(full, 0.5, 1000))
    assert rep.star == "converged" and rep.starstar == "converged"


def test_summability_diverging():
    n = np.arange(1, 1001, dtype=float)
    logD = 2 * np.log(n)
    g = choose_gamma(logD, 2.0)
    t = CriticalOrbitTable(0.5, 2.0, logD, g, compute_bn(logD, g, 2.0),
                           compute_dn(logD, g, 2.0, np.full(1000, 0.1)), np.full(1000, 0.1))
    assert check_summability(t).star == "diverging"


def test_summability_window_too_short(full):
    with pytest.raises(WindowTooShort):
        check_summability(build_table(full, 0.5, 50))


def test_classify_exponential():
    n = np.arange(1, 1001)
    dc = classify_growth(4.0 ** (-n / 3.0))
    assert dc.kind == "exponential"
    assert dc.params["beta"] == pytest.approx(LOG4 / 3, rel=0.05)


def test_classify_polynomial():
    n = np.arange(1, 1001, dtype=float)
    dc = classify_growth(n ** -3.0, "d-sequence")
    assert dc.kind == "polynomial"
    assert dc.params["alpha"] == pytest.approx(3.0, rel=0.05)


@settings(max_examples=15, deadline=None)
@given(beta=st.floats(0.6, 3.0), alpha=st.floats(0.2, 0.7))
def test_classify_recovers_stretched(beta, alpha):
    n = np.arange(1, 5001, dtype=float)
    dc = classify_growth(np.exp(-beta * n ** alpha), window=(1, 5000))
    assert dc.kind == "stretched-exponential"
    assert dc.params["alpha"] == pytest.approx(alpha, rel=0.05)
    assert dc.params["beta"] == pytest.approx(beta, rel=0.05)


def test_classify_degenerate():
    with pytest.raises(DegenerateSequence):
        classify_growth(np.ones(200))
    with pytest.raises(DegenerateSequence):
        classify_growth(np.exp(-np.arange(20.0)))


def test_closest_returns_full(full):
    assert closest_returns(full, 0.5, 100) == [(1, 0.5)]
    assert closest_returns(full, 0.5, 0) == []


def test_fibonacci_kneading_prefix():
    # e_1.. of the Fibonacci combinatorics: cutting times 1, 2, 3, 5, 8, ...
    assert fibonacci_kneading(8) == [1, 0, 0, 1, 1, 1, 0, 1]
    assert fibonacci_numbers(6) == [1, 2, 3, 5, 8, 13]


def test_kneading_order_sign_rule():
    assert kneading_compare([1, 1, 0], [1, 1, 1]) == -1
    assert kneading_compare([1, 0, 0], [1, 0, 1]) == 1
    assert kneading_compare([0, 1], [0, 0]) == 1
    assert kneading_compare([1, 0], [1, 0]) == 0


def test_fibonacci_parameter_and_returns(fib_map):
    # oracle: 600-bit bisection on the kneading order
    assert float(fib_map.params[0]) == pytest.approx(1.8705286321646448, rel=1e-15)
    times = [t for t, _ in closest_returns(fib_map, 0.5, 1000)]
    assert times[:12] == FIB12
    dists = [d for _, d in closest_returns(fib_map, 0.5, 1000)]
    assert all(b < a for a, b in zip(dists, dists[1:]))


def test_fibonacci_scaling(fib_map):
    fit = fibonacci_scaling_check(fib_map, 12)
    assert fit.beta_prime > 0 and fit.r2 >= 0.95


def test_fibonacci_dn_super_polynomial(fib_map):
    t = build_table(fib_map, 0.5, 5000)
    assert classify_dn(t).label == "super-polynomial / sub-stretched"


def test_logistic_fibonacci_parameter():
    a = find_fibonacci_parameter("logistic", (3.0, 4.0), prec=300)
    m = fibonacci_map("logistic", a, 300)
    assert [t for t, _ in closest_returns(m, 0.5, 300)][:12] == FIB12


def test_fibonacci_bracket_error():
    with pytest.raises(BracketError):
        find_fibonacci_parameter("logistic", (3.99, 4.0), prec=200)


def test_scaling_synthetic():
    r = np.arange(4, 13, dtype=float)
    fit = fitted_scaling(r, -0.3 * r ** 2)
    assert fit.beta_prime == pytest.approx(0.3, rel=0.01)


def test_scaling_needs_returns(full):
    with pytest.raises(DegenerateSequence):
        fibonacci_scaling_check(full, 12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200))
def test_compensated_cumsum_matches_fsum(xs):
    out = compensated_cumsum(np.array(xs))
    for k in range(len(xs)):
        exact = math.fsum(xs[: k + 1])
        assert abs(out[k] - exact) <= 4 * math.ulp(max(abs(exact), 1e-300)) + 1e-12


def test_compensated_cumsum_long_run():
    # oracle: k log 4 rounded once; a plain running sum drifts by ~1e-10 here
    k = np.arange(1, 10_001)
    out = compensated_cumsum(np.full(10_000, LOG4))
    assert np.max(np.abs(out - k * LOG4)) <= 2e-12
