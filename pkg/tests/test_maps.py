from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from towerdyn.errors import CriticalHit, DomainError, InvalidMap
from towerdyn.maps import (PrecisionWarning, eval_deriv, eval_map, iterate, make_map,
                           mp_pullback, orbit_derivative_log, pullback)

LOG4 = math.log(4.0)


@pytest.fixture(scope="module")
def full():
    return make_map("quadratic-logistic", [4.0])


@pytest.mark.parametrize("x, expected", [(0.5, 1.0), (1.0, 0.0), (0.0, 0.0), (0.25, 0.75)])
def test_eval_map_full_logistic(full, x, expected):
    assert eval_map(full, x) == pytest.approx(expected, abs=1e-15)


def test_eval_map_normal_natural_boundary():
    m = make_map("quadratic-normal", [2.0])
    assert (m.x_lo, m.x_hi) == (-2.0, 2.0)
    assert eval_map(m, 0.0, natural=True) == pytest.approx(2.0)
    assert eval_map(m, 2.0, natural=True) == pytest.approx(-2.0)


@pytest.mark.parametrize("x, expected", [(0.5, 0.0), (1.0, -4.0), (0.0, 4.0)])
def test_eval_deriv(full, x, expected):
    assert eval_deriv(full, x) == expected


@pytest.mark.parametrize("x", [-1e-9, 1.0 + 1e-9, float("nan")])
def test_domain_error(full, x):
    with pytest.raises(DomainError):
        eval_map(full, x)


def test_tolerance_clamps(full):
    assert eval_map(full, 1.0 + 1e-13) == 0.0


def test_iterate_endpoint(full):
    orb = iterate(full, 1.0, 3)
    np.testing.assert_array_equal(orb.points, [1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(orb.log_deriv_partials, [0, LOG4, 2 * LOG4, 3 * LOG4])


def test_iterate_through_critical_point_is_flagged(full):
    with pytest.warns(PrecisionWarning):
        orb = iterate(full, 0.5, 2)
    np.testing.assert_array_equal(orb.points, [0.5, 1.0, 0.0])
    assert orb.hit_critical and orb.critical_step == 0
    assert orb.log_deriv_partials[1] == -np.inf


def test_chebyshev_lyapunov_exponent():
    m = make_map("chebyshev-2", [])
    orb = iterate(m, 0.123456789, 10**6)
    assert orb.log_deriv_partials[-1] / 10**6 == pytest.approx(math.log(2.0), abs=0.01)


@pytest.mark.parametrize("n, expected", [(0, 0.0), (2, math.log(16.0)), (5, 5 * LOG4)])
def test_orbit_derivative_log(full, n, expected):
    assert orbit_derivative_log(full, 1.0, n) == pytest.approx(expected, rel=1e-14)


def test_orbit_derivative_log_critical_hit(full):
    with pytest.raises(CriticalHit):
        orbit_derivative_log(full, 0.5, 3)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(0.01, 0.99), n1=st.integers(0, 20), n2=st.integers(0, 20))
def test_chain_rule(x, n1, n2):
    m = make_map("logistic", [3.9])
    assume(abs(x - 0.5) > 1e-6)
    whole = orbit_derivative_log(m, x, n1 + n2)
    mid = iterate(m, x, n1).points[-1]
    parts = orbit_derivative_log(m, x, n1) + orbit_derivative_log(m, mid, n2)
    assert whole == pytest.approx(parts, rel=1e-8, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.0, 1.0), n=st.integers(1, 40))
def test_orbit_invariants(x, n):
    m = make_map("cubic-multimodal", [1.0, 0.0])
    orb = iterate(m, x, n)
    np.testing.assert_allclose(m.f(orb.points[:-1]), orb.points[1:], atol=1e-12)
    with np.errstate(divide="ignore"):
        resum = np.concatenate([[0.0], np.cumsum(np.log(np.abs(m.df(orb.points[:-1]))))])
    finite = np.isfinite(resum)
    np.testing.assert_allclose(orb.log_deriv_partials[finite], resum[finite], rtol=1e-10)


@pytest.mark.parametrize("family, params", [("logistic", [3.8]), ("normal", [1.9]),
                                            ("chebyshev", []), ("cubic", [1.0, 0.0]),
                                            ("cubic", [0.9, 0.1])])
def test_critical_order_model(family, params):
    m = make_map(family, params)
    for c in m.critical_points:
        for side in (-1.0, 1.0):
            h = np.logspace(-6, -2, 50)
            vals = np.log(np.abs(m.df(c + side * h))) - np.log(h)
            assert np.ptp(vals) < 2.0


def test_full_cubic_domain_and_critical_points():
    m = make_map("cubic", [1.0, 0.0])
    assert (m.x_lo, m.x_hi) == (-2.0, 2.0)
    assert m.critical_points == pytest.approx((0.25, 0.75))
    assert m.f(0.25) == pytest.approx(1.0) and m.f(0.75) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("family, params", [("logistic", [4.2]), ("normal", [2.5]),
                                            ("banana", [1.0])])
def test_invalid_maps(family, params):
    with pytest.raises(InvalidMap):
        make_map(family, params)


def test_critical_order_other_than_two_rejected():
    with pytest.raises(InvalidMap):
        make_map("logistic", [4.0], critical_order=3.0)


def test_determinism(full):
    a = iterate(full, 0.3, 1000)
    b = iterate(full, 0.3, 1000)
    assert a.points.tobytes() == b.points.tobytes()
    assert a.log_deriv_partials.tobytes() == b.log_deriv_partials.tobytes()


@pytest.mark.parametrize("family, params", [("logistic", [4.0]), ("normal", [1.8]),
                                            ("cubic", [1.0, 0.0])])
def test_pullback_inverts_forward(family, params):
    m = make_map(family, params)
    rng = np.random.default_rng(5)
    for x in rng.uniform(0.01, 0.99, 20):
        orb = iterate(m, x, 6)
        word = [m.lap_of(p) for p in orb.points[:6]]
        x_back, lg = pullback(m, word, orb.points[6])
        assert x_back == pytest.approx(x, abs=1e-6)
        assert lg == pytest.approx(orb.log_deriv_partials[6], abs=1e-6)


def test_mp_pullback_agrees_with_float():
    m = make_map("logistic", [4.0])
    word = [0, 1, 1, 0]
    xf, _ = pullback(m, word, 0.3)
    xm = mp_pullback(m, word, "0.3", 200)
    assert float(xm) == pytest.approx(xf, rel=1e-13)


def test_diff_is_cancellation_free(full):
    z, e = 0.5, 1e-12
    assert full.diff(z, e) == pytest.approx(-4.0 * e * e, rel=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert full.f(z + e) - full.f(z) in (0.0, -1.1102230246251565e-16)
